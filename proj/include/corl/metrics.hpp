#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace corl {

// Success-rate matrix over the boundary-checkpoint grid. Row t (0..K) holds
// the per-task success rates measured after the first t tasks finished
// training; row 0 is the untrained-policy reference. Column i (0..K-1) is
// task i+1 in training order. `delta` records the per-task iteration budget
// the grid spacing corresponds to.
struct PerformanceMatrix {
  int K = 0;
  double delta = 0.0;
  std::vector<std::vector<double>> p;  // (K+1) rows x K columns

  // Complete grid, every entry in [0, 1].
  void validate() const;
};

// Mean success over tasks at one checkpoint row; off-grid rows are an error.
double average_performance(const PerformanceMatrix& P, int checkpoint);

// Mean over tasks of (success at its own boundary - final success).
// Positive values mean later training erased earlier competence; negative
// values mean later tasks improved earlier ones.
double forgetting(const PerformanceMatrix& P);

// Mean over tasks of (success just before its training - untrained success),
// divided by K-1; the first task's term is identically zero and K = 1 yields
// 0 by convention (no predecessors exist to transfer from).
double forward_transfer(const PerformanceMatrix& P);

// ----------------------------- reports -----------------------------

struct MetricRow {
  std::string method;
  uint64_t seed = 0;
  int order = 0;
  double ap_final = 0.0;
  double forgetting = 0.0;
  double fwt = 0.0;
};

// "method,seed,order,AP_final,F,FWT" header plus one row per entry.
std::string metrics_csv(const std::vector<MetricRow>& rows);

// "task,checkpoint,success" header plus K*(K+1) rows, task-major so each
// task's curve is contiguous.
std::string curves_csv(const PerformanceMatrix& P);

// Square attention table: header row of task ids, one weight row per task.
// The self-entry is pinned at 1 by convention; rows of tasks that composed
// sum to 1 over the remaining columns.
std::string attention_csv(const std::vector<int>& task_ids,
                          const std::vector<std::vector<double>>& rows);

// Minimal static SVG: one colored cell per matrix entry (values clamped to
// [0,1]), row/column labels, in-cell value text, and a title. Byte-stable
// for identical inputs.
std::string svg_heatmap(const std::vector<std::vector<double>>& m,
                        const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::string& title);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace corl
