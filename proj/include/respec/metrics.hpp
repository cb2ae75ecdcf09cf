#pragma once

// CSV views of a run's history, one table per figure-style question:
//   loss_curves.csv   - the adopted model's training curve, per episode
//   design_params.csv - the adopted spec's knobs per episode; size-like
//                       parameters (avg_h, avg_s) also appear as log2 columns
//   param_counts.csv  - parameter count of the adopted model per episode
//   sweep.csv         - the candidates-vs-episodes grid (emit_sweep)
//
// Every number is written with shortest round-trip formatting, so re-parsing
// a file reproduces the in-memory values bit-for-bit, and a replayed run
// rewrites byte-identical files.

#include <string>
#include <vector>

#include "respec/loop.hpp"

namespace respec::metrics {

// Shortest decimal strings that parse back to exactly the same value.
std::string format_double(double v);
std::string format_float(float v);

// Writes the three per-episode tables into out_dir (created if needed).
// Throws std::invalid_argument on empty logs or logs that mix spec families,
// SaveError on I/O failure.
void emit_metrics(const std::vector<loop::EpisodeLog>& logs, const std::string& out_dir);

// Writes the sweep grid, one row per cell in the given order.
void emit_sweep(const std::vector<loop::SweepCell>& cells, const std::string& path);

// Strict reader for the files this module writes: comma-separated, no
// quoting, one header row included as row 0. Throws LoadError(io) if the
// file cannot be opened.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace respec::metrics
