#include "parlm/caption.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace parlm {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

Caption build_caption(const LabelVector& labels, const AttributeSchema& schema) {
  auto verdict = validate_labels(labels, schema);
  if (!verdict.ok) throw CaptionParseError("invalid labels: " + verdict.reason);
  std::ostringstream out;
  bool first_clause = true;
  for (const auto& g : schema.groups()) {
    if (!first_clause) out << ' ';
    first_clause = false;
    out << lower(g.name) << ": ";
    bool any = false;
    for (int i : g.members) {
      if (!labels[i]) continue;
      if (any) out << ", ";
      out << lower(schema.attribute(i));
      any = true;
    }
    if (!any) out << "none";
    out << '.';
  }
  return Caption{out.str(), labels};
}

LabelVector parse_caption(const std::string& text, const AttributeSchema& schema) {
  LabelVector labels(schema.attribute_count(), 0);
  auto clauses = split_on(text, '.');
  // Drop trailing whitespace-only fragment after the final period.
  while (!clauses.empty() && trim(clauses.back()).empty()) clauses.pop_back();
  if (static_cast<int>(clauses.size()) != schema.group_count())
    throw CaptionParseError("expected " + std::to_string(schema.group_count()) + " clauses, found " +
                            std::to_string(clauses.size()));
  for (int j = 0; j < schema.group_count(); ++j) {
    const auto& g = schema.group(j);
    auto parts = split_on(clauses[j], ':');
    if (parts.size() != 2)
      throw CaptionParseError("clause " + std::to_string(j) + " is not '<group>: <attributes>'");
    if (trim(parts[0]) != lower(g.name))
      throw CaptionParseError("clause " + std::to_string(j) + " names group '" + trim(parts[0]) +
                              "', expected '" + lower(g.name) + "'");
    std::string body = trim(parts[1]);
    if (body == "none") continue;
    for (const auto& item : split_on(body, ',')) {
      std::string name = trim(item);
      if (name.empty()) throw CaptionParseError("empty attribute in clause " + std::to_string(j));
      int found = -1;
      for (int i : g.members)
        if (lower(schema.attribute(i)) == name) {
          found = i;
          break;
        }
      if (found < 0)
        throw CaptionParseError("unknown attribute '" + name + "' in group '" + g.name + "'");
      labels[found] = 1;
    }
  }
  return labels;
}

}  // namespace parlm
