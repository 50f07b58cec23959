#include "corl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "corl/common.hpp"

namespace corl {

void PerformanceMatrix::validate() const {
  CORL_CHECK(K >= 1, "performance matrix needs at least one task");
  CORL_CHECK(int(p.size()) == K + 1, "checkpoint grid incomplete");
  for (const auto& row : p) {
    CORL_CHECK(int(row.size()) == K, "checkpoint row incomplete");
    for (double v : row)
      CORL_CHECK(v >= 0.0 && v <= 1.0, "success rate outside [0, 1]");
  }
}

double average_performance(const PerformanceMatrix& P, int checkpoint) {
  P.validate();
  CORL_CHECK(checkpoint >= 0 && checkpoint <= P.K,
             "checkpoint off the evaluation grid");
  double sum = 0.0;
  for (double v : P.p[size_t(checkpoint)]) sum += v;
  return sum / double(P.K);
}

double forgetting(const PerformanceMatrix& P) {
  P.validate();
  double sum = 0.0;
  for (int i = 1; i <= P.K; ++i)
    sum += P.p[size_t(i)][size_t(i - 1)] - P.p[size_t(P.K)][size_t(i - 1)];
  return sum / double(P.K);
}

double forward_transfer(const PerformanceMatrix& P) {
  P.validate();
  if (P.K == 1) return 0.0;  // the only term is identically zero
  double sum = 0.0;
  for (int i = 1; i <= P.K; ++i)
    sum += P.p[size_t(i - 1)][size_t(i - 1)] - P.p[0][size_t(i - 1)];
  return sum / double(P.K - 1);
}

// ----------------------------- reports -----------------------------

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "method,seed,order,AP_final,F,FWT\n";
  for (const MetricRow& r : rows) {
    out += r.method;
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += std::to_string(r.order);
    out += ',';
    out += fmt_double(r.ap_final);
    out += ',';
    out += fmt_double(r.forgetting);
    out += ',';
    out += fmt_double(r.fwt);
    out += '\n';
  }
  return out;
}

std::string curves_csv(const PerformanceMatrix& P) {
  P.validate();
  std::string out = "task,checkpoint,success\n";
  for (int i = 1; i <= P.K; ++i)
    for (int t = 0; t <= P.K; ++t) {
      out += std::to_string(i);
      out += ',';
      out += std::to_string(t);
      out += ',';
      out += fmt_double(P.p[size_t(t)][size_t(i - 1)]);
      out += '\n';
    }
  return out;
}

std::string attention_csv(const std::vector<int>& task_ids,
                          const std::vector<std::vector<double>>& rows) {
  CORL_CHECK(task_ids.size() == rows.size(),
             "attention table must be square over the task list");
  std::string out = "task";
  for (int id : task_ids) out += ',' + std::to_string(id);
  out += '\n';
  for (size_t r = 0; r < rows.size(); ++r) {
    CORL_CHECK(rows[r].size() == task_ids.size(),
               "attention row width mismatch");
    out += std::to_string(task_ids[r]);
    for (double v : rows[r]) out += ',' + fmt_double(v);
    out += '\n';
  }
  return out;
}

namespace {

// Three-stop gradient from deep violet through teal to yellow, so low and
// high cells are distinguishable in grayscale prints too.
void heat_color(double v, int rgb[3]) {
  v = std::clamp(v, 0.0, 1.0);
  static const int stops[3][3] = {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}};
  const double s = v * 2.0;
  const int lo = s < 1.0 ? 0 : 1;
  const double f = s - double(lo);
  for (int c = 0; c < 3; ++c)
    rgb[c] = int(std::lround(stops[lo][c] + f * (stops[lo + 1][c] - stops[lo][c])));
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string svg_heatmap(const std::vector<std::vector<double>>& m,
                        const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::string& title) {
  CORL_CHECK(!m.empty() && !m[0].empty(), "heatmap needs at least one cell");
  CORL_CHECK(row_labels.size() == m.size(), "one label per heatmap row");
  for (const auto& row : m)
    CORL_CHECK(row.size() == m[0].size(), "ragged heatmap matrix");
  CORL_CHECK(col_labels.size() == m[0].size(), "one label per heatmap column");

  const int cell = 34, left = 70, top = 48;
  const int rows = int(m.size()), cols = int(m[0].size());
  const int width = left + cols * cell + 10;
  const int height = top + rows * cell + 10;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" font-family=\"monospace\">\n";
  out << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">"
      << xml_escape(title) << "</text>\n";
  for (int c = 0; c < cols; ++c)
    out << "<text x=\"" << left + c * cell + cell / 2 << "\" y=\"" << top - 6
        << "\" font-size=\"10\" text-anchor=\"middle\">"
        << xml_escape(col_labels[size_t(c)]) << "</text>\n";
  for (int r = 0; r < rows; ++r) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << top + r * cell + cell / 2 + 4
        << "\" font-size=\"10\" text-anchor=\"end\">"
        << xml_escape(row_labels[size_t(r)]) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      int rgb[3];
      heat_color(m[size_t(r)][size_t(c)], rgb);
      const int x = left + c * cell, y = top + r * cell;
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"rgb(" << rgb[0] << ','
          << rgb[1] << ',' << rgb[2] << ")\"/>\n";
      // Dark text on bright cells, light text on dark ones.
      const int lum = (2 * rgb[1] + rgb[0] + rgb[2]) / 4;
      out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 3
          << "\" font-size=\"9\" text-anchor=\"middle\" fill=\""
          << (lum > 140 ? "#000" : "#fff") << "\">"
          << fmt_fixed(m[size_t(r)][size_t(c)], 2) << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  CORL_CHECK(out.good(), "cannot open for write: " + path);
  out.write(content.data(), std::streamsize(content.size()));
  out.flush();
  CORL_CHECK(out.good(), "write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  CORL_CHECK(in.good(), "cannot open for read: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace corl
