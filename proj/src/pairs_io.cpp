#include "respec/pairs_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace respec::refine {

using nlohmann::json;

namespace {

json rule_to_json(const RefinementRule& rule) {
  json j;
  j["action"] = std::string(action_name(rule.action));
  if (rule.action == RuleAction::scale) j["percent"] = rule.percent;
  j["target"] = rule.target;
  return j;
}

RefinementRule rule_from_json(const json& j) {
  RefinementRule rule;
  std::string action = j.at("action").get<std::string>();
  if (action == "increment")
    rule.action = RuleAction::increment;
  else if (action == "decrement")
    rule.action = RuleAction::decrement;
  else if (action == "scale")
    rule.action = RuleAction::scale;
  else
    throw std::runtime_error("unknown rule action `" + action + "`");
  rule.target = j.at("target").get<std::string>();
  if (rule.action == RuleAction::scale)
    rule.percent = j.at("percent").get<int>();
  else if (j.contains("percent"))
    throw std::runtime_error("percent is only valid for scale rules");
  return rule;
}

}  // namespace

void write_pair_line(std::ostream& os, const RefinementPair& pair) {
  json j;
  j["input"] = pair.input_text;
  j["output"] = pair.output_text;
  j["rule"] = rule_to_json(pair.rule);
  os << j.dump() << '\n';
}

void write_pairs_jsonl(std::ostream& os, const std::vector<RefinementPair>& pairs) {
  for (const RefinementPair& p : pairs) write_pair_line(os, p);
}

std::vector<RefinementPair> read_pairs_jsonl(std::istream& is, long long limit) {
  std::vector<RefinementPair> out;
  std::string line;
  long long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error("pairs line " + std::to_string(line_no) + ": invalid JSON");
    try {
      RefinementPair p;
      p.input_text = j.at("input").get<std::string>();
      p.output_text = j.at("output").get<std::string>();
      p.rule = rule_from_json(j.at("rule"));
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::runtime_error("pairs line " + std::to_string(line_no) + ": " + e.what());
    }
    if (limit > 0 && static_cast<long long>(out.size()) >= limit) break;
  }
  return out;
}

std::vector<RefinementPair> read_pairs_file(const std::string& path, long long limit) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open pairs file: " + path);
  return read_pairs_jsonl(is, limit);
}

}  // namespace respec::refine
