#include "parlm/schema.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace parlm {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    std::string t = trim(cur);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace

AttributeSchema AttributeSchema::build(std::vector<std::string> attributes,
                                       std::vector<AttributeGroup> groups) {
  AttributeSchema s;
  s.attributes_ = std::move(attributes);
  s.groups_ = std::move(groups);
  s.group_of_.assign(s.attributes_.size(), -1);
  for (int j = 0; j < static_cast<int>(s.groups_.size()); ++j) {
    for (int i : s.groups_[j].members) {
      if (i < 0 || i >= static_cast<int>(s.attributes_.size()))
        throw SchemaError("group '" + s.groups_[j].name + "' references attribute index out of range");
      if (s.group_of_[i] != -1)
        throw SchemaError("attribute '" + s.attributes_[i] + "' assigned to two groups");
      s.group_of_[i] = j;
    }
  }
  for (int i = 0; i < static_cast<int>(s.attributes_.size()); ++i) {
    if (s.index_.count(s.attributes_[i]))
      throw SchemaError("duplicate attribute '" + s.attributes_[i] + "'");
    s.index_[s.attributes_[i]] = i;
  }
  s.validate();
  return s;
}

void AttributeSchema::validate() const {
  if (attributes_.empty()) throw SchemaError("schema has no attributes");
  if (groups_.empty()) throw SchemaError("schema has no groups");
  for (const auto& g : groups_) {
    if (g.members.empty()) throw SchemaError("empty group '" + g.name + "'");
    for (std::size_t k = 1; k < g.members.size(); ++k)
      if (g.members[k] <= g.members[k - 1])
        throw SchemaError("group '" + g.name + "' member list not strictly increasing");
  }
  for (std::size_t i = 0; i < group_of_.size(); ++i)
    if (group_of_[i] == -1)
      throw SchemaError("attribute '" + attributes_[i] + "' belongs to no group");
}

int AttributeSchema::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

bool AttributeSchema::operator==(const AttributeSchema& other) const {
  if (attributes_ != other.attributes_) return false;
  if (groups_.size() != other.groups_.size()) return false;
  for (std::size_t j = 0; j < groups_.size(); ++j) {
    if (groups_[j].name != other.groups_[j].name) return false;
    if (groups_[j].members != other.groups_[j].members) return false;
    if (groups_[j].question != other.groups_[j].question) return false;
  }
  return true;
}

AttributeSchema AttributeSchema::parse(const std::string& text) {
  std::vector<std::string> attributes;
  std::vector<AttributeGroup> groups;
  std::istringstream in(text);
  std::string line;
  AttributeGroup* cur = nullptr;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      groups.push_back(AttributeGroup{trim(t.substr(1, t.size() - 2)), {}, ""});
      cur = &groups.back();
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos || cur == nullptr)
      throw SchemaError("schema line " + std::to_string(lineno) + ": expected '[Group]' or 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key == "question") {
      cur->question = value;
    } else if (key == "attributes") {
      for (const auto& name : split_list(value)) {
        cur->members.push_back(static_cast<int>(attributes.size()));
        attributes.push_back(name);
      }
    } else {
      throw SchemaError("schema line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return build(std::move(attributes), std::move(groups));
}

AttributeSchema AttributeSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

AttributeSchema AttributeSchema::resolve(const std::string& source) {
  if (source == "msp60k") return msp60k();
  return load(source);
}

std::string AttributeSchema::serialize() const {
  std::ostringstream out;
  for (const auto& g : groups_) {
    out << "[" << g.name << "]\n";
    out << "question = " << g.question << "\n";
    out << "attributes = ";
    for (std::size_t k = 0; k < g.members.size(); ++k) {
      if (k) out << ", ";
      out << attributes_[g.members[k]];
    }
    out << "\n\n";
  }
  return out.str();
}

const AttributeSchema& AttributeSchema::msp60k() {
  static const AttributeSchema schema = parse(R"(
[Gender]
question = What is their gender?
attributes = Female

[Age]
question = What is their age?
attributes = Child, Adult, Elderly

[Body Size]
question = What is their body size?
attributes = Fat, Normal, Thin

[Viewpoint]
question = Which side are they facing?
attributes = Front, Back, Side

[Head]
question = What are wearing on their head?
attributes = Bald, Long Hair, Black Hair, Hat, Glasses, Mask, Helmet, Scarf, Gloves

[Upper Body]
question = What are wearing on top?
attributes = Short Sleeves, Long Sleeves, Shirt, Jacket, Suit, Vest, Cotton Coat, Coat, Graduation Gown, Chef Uniform

[Lower Body]
question = What are wearing on their lower body?
attributes = Trousers, Shorts, Jeans, Long Skirt, Short Skirt, Dress

[Shoes]
question = What shoes are they wearing?
attributes = Leather Shoes, Casual Shoes, Boots, Sandals, Other Shoes

[Bag]
question = What bags are they carrying?
attributes = Backpack, Shoulder Bag, Hand Bag, Plastic Bag, Paper Bag, Suitcase, Others

[Activity]
question = What activity are they doing?
attributes = Calling, Smoking, Hands Back, Arms Crossed

[Posture]
question = What is their posture?
attributes = Walking, Running, Standing, Bicycle, Scooter, Skateboard
)");
  return schema;
}

LabelVerdict validate_labels(const LabelVector& v, const AttributeSchema& s) {
  if (static_cast<int>(v.size()) != s.attribute_count())
    return {false, "length " + std::to_string(v.size()) + " != " + std::to_string(s.attribute_count())};
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0 && v[i] != 1)
      return {false, "entry " + std::to_string(i) + " is not binary"};
  return {};
}

LabelVerdict validate_labels(std::span<const double> v, const AttributeSchema& s) {
  if (static_cast<int>(v.size()) != s.attribute_count())
    return {false, "length " + std::to_string(v.size()) + " != " + std::to_string(s.attribute_count())};
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0.0 && v[i] != 1.0)
      return {false, "entry " + std::to_string(i) + " is not binary"};
  return {};
}

}  // namespace parlm
