#include "respec/metrics.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "respec/errors.hpp"

namespace respec::metrics {

namespace {

template <typename T>
std::string shortest(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SaveError("cannot open for writing: " + path);
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw SaveError("write failed: " + path);
}

// The size-like design parameters; Fig-style plots read them on a log2 axis.
bool is_size_param(const std::string& key) { return key == "avg_h" || key == "avg_s"; }

}  // namespace

std::string format_double(double v) { return shortest(v); }
std::string format_float(float v) { return shortest(v); }

void emit_metrics(const std::vector<loop::EpisodeLog>& logs, const std::string& out_dir) {
  if (logs.empty()) throw std::invalid_argument("no episode logs to emit");
  const auto& keys = logs.front().design_params;
  for (const auto& log : logs)
    if (log.design_params.size() != keys.size() ||
        !std::equal(keys.begin(), keys.end(), log.design_params.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; }))
      throw std::invalid_argument("episode logs mix design-parameter sets");

  std::filesystem::create_directories(out_dir);

  {
    auto out = open_out(out_dir + "/loss_curves.csv");
    out << "episode,step,loss\n";
    for (const auto& log : logs) {
      const auto& adopted = log.adopted_index == loop::kKeepOriginal
                                ? log.original
                                : log.reports[static_cast<size_t>(log.adopted_index)];
      for (size_t s = 0; s < adopted.step_losses.size(); ++s)
        out << log.episode << ',' << s << ',' << format_float(adopted.step_losses[s]) << '\n';
    }
    finish(out, out_dir + "/loss_curves.csv");
  }

  {
    auto out = open_out(out_dir + "/design_params.csv");
    out << "episode";
    for (const auto& [key, _] : keys) out << ',' << key;
    for (const auto& [key, _] : keys)
      if (is_size_param(key)) out << ",log2_" << key;
    out << '\n';
    for (const auto& log : logs) {
      out << log.episode;
      for (const auto& [_, value] : log.design_params) out << ',' << format_double(value);
      for (const auto& [key, value] : log.design_params)
        if (is_size_param(key)) out << ',' << format_double(std::log2(value));
      out << '\n';
    }
    finish(out, out_dir + "/design_params.csv");
  }

  {
    auto out = open_out(out_dir + "/param_counts.csv");
    out << "episode,param_count\n";
    for (const auto& log : logs) {
      out << log.episode << ',';
      if (log.adopted_param_count.has_value()) out << *log.adopted_param_count;
      out << '\n';
    }
    finish(out, out_dir + "/param_counts.csv");
  }
}

void emit_sweep(const std::vector<loop::SweepCell>& cells, const std::string& path) {
  auto out = open_out(path);
  out << "n_candidates,n_episodes,total_candidates,replicates,mean_metric\n";
  for (const auto& c : cells)
    out << c.n_candidates << ',' << c.n_episodes << ',' << c.total_candidates << ','
        << c.replicates << ',' << format_double(c.mean_metric) << '\n';
  finish(out, path);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::io, "cannot open: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(field);
    if (!line.empty() && line.back() == ',') row.push_back("");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace respec::metrics
