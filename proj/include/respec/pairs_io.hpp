#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "respec/mutation.hpp"

namespace respec::refine {

// One pair per line:
//   {"input":"...","output":"...","rule":{"action":"...","percent":N,"target":"..."}}
// Keys are emitted in sorted order and floats never appear, so the bytes are
// stable across platforms. `percent` is present only for scale rules.
void write_pair_line(std::ostream& os, const RefinementPair& pair);
void write_pairs_jsonl(std::ostream& os, const std::vector<RefinementPair>& pairs);

// Strict reader: any malformed line throws std::runtime_error naming the
// 1-based line number. `limit` > 0 stops after that many pairs.
std::vector<RefinementPair> read_pairs_jsonl(std::istream& is, long long limit = 0);
std::vector<RefinementPair> read_pairs_file(const std::string& path, long long limit = 0);

}  // namespace respec::refine
