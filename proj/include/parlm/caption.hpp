#pragma once

#include <stdexcept>
#include <string>

#include "parlm/schema.hpp"

namespace parlm {

class CaptionParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Caption {
  std::string text;
  LabelVector source_labels;
};

// Deterministic sentence enumerating the positive attributes group by group
// in schema order, one clause per group:
//   "gender: female. age: adult. head: black hair, hat. ..."
// A group with no positive attributes reads "<group>: none.". The grammar is
// exactly invertible by parse_caption.
Caption build_caption(const LabelVector& labels, const AttributeSchema& schema);

// Exact inverse of build_caption on template-produced text. Throws
// CaptionParseError on anything outside the grammar.
LabelVector parse_caption(const std::string& text, const AttributeSchema& schema);

}  // namespace parlm
