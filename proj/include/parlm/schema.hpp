#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace parlm {

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AttributeGroup {
  std::string name;
  std::vector<int> members;  // strictly increasing positions in [0, M)
  std::string question;      // instruction question for this group
};

// Binary label vector, one entry per attribute.
using LabelVector = std::vector<std::uint8_t>;

// Immutable attribute vocabulary partitioned into named groups. Safe to
// share across threads once constructed.
class AttributeSchema {
 public:
  // Built-in 57-attribute / 11-group MSP60K-style schema.
  static const AttributeSchema& msp60k();

  // Parses the schema text format (see data/msp60k_schema.txt). Throws
  // SchemaError on duplicate attributes, duplicate group assignment or
  // empty groups.
  static AttributeSchema parse(const std::string& text);
  static AttributeSchema load(const std::filesystem::path& path);

  // "msp60k" resolves to the built-in schema, anything else is a path.
  static AttributeSchema resolve(const std::string& source);

  std::string serialize() const;

  int attribute_count() const { return static_cast<int>(attributes_.size()); }
  int group_count() const { return static_cast<int>(groups_.size()); }
  const std::vector<std::string>& attributes() const { return attributes_; }
  const std::vector<AttributeGroup>& groups() const { return groups_; }
  const AttributeGroup& group(int j) const { return groups_.at(j); }
  const std::string& attribute(int i) const { return attributes_.at(i); }

  // Position of an attribute name, or -1 if unknown.
  int index_of(const std::string& name) const;
  // Group index owning attribute position i.
  int group_of(int i) const { return group_of_.at(i); }

  bool operator==(const AttributeSchema& other) const;

 private:
  AttributeSchema() = default;
  static AttributeSchema build(std::vector<std::string> attributes,
                               std::vector<AttributeGroup> groups);
  void validate() const;

  std::vector<std::string> attributes_;
  std::vector<AttributeGroup> groups_;
  std::vector<int> group_of_;
  std::unordered_map<std::string, int> index_;
};

struct LabelVerdict {
  bool ok = true;
  std::string reason;
};

LabelVerdict validate_labels(const LabelVector& v, const AttributeSchema& s);
// Overload for unconstrained numeric entries (e.g. freshly parsed values).
LabelVerdict validate_labels(std::span<const double> v, const AttributeSchema& s);

}  // namespace parlm
