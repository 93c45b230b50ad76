#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rfs/harness/train.hpp"
#include "rfs/spectrum/spectrum.hpp"
#include "rfs/tasks/tasks.hpp"

namespace rfs::io {

// Datasets: one JSON object per line. The first line is the header
//   {"kind":"dataset-meta","schema_version","config_hash","seed","task",
//    "n_train","n_test","train_max","test_max"}
// followed by {"set":"train"|"test","task","length","split":"train_len"|"ood_len",
// "prompt","target"} rows in surface text; tokenization happens on load.
void write_dataset_jsonl(std::ostream& out, const tasks::Dataset& data,
                         const std::string& config_hash);
void write_dataset_jsonl(const std::filesystem::path& path, const tasks::Dataset& data,
                         const std::string& config_hash);
tasks::Dataset read_dataset_jsonl(const std::filesystem::path& path);

// Results ledger: append-only JSONL of RunRecords.
void append_ledger(const std::filesystem::path& path, const harness::RunRecord& record);
std::vector<harness::RunRecord> read_ledger(const std::filesystem::path& path);

// Per-length curves CSV with header
//   strategy,encoding,task,length,seed,accuracy,variant,train_max,config_hash,schema_version
// One row per (record, length), accuracy with 6 decimals.
struct CurveRow {
  std::string strategy;
  std::string encoding;
  std::string task;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::string variant;
  std::size_t train_max = 0;
  std::string config_hash;
  int schema_version = 1;
};

extern const char* const kCurveHeader;
std::vector<CurveRow> curve_rows(const harness::RunRecord& record);
void write_curves_csv(std::ostream& out, const std::vector<CurveRow>& rows);
void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curves_csv(const std::filesystem::path& path);

// Spectrum summary CSV, one row per report:
//   strategy,n,d,range_L,tolerance,numerical_rank,sigma_max,sigma_min,config_hash,schema_version
// and a long-form CSV of every singular value: strategy,n,index,sigma.
extern const char* const kSpectrumHeader;
void write_spectrum_csv(std::ostream& out, const std::vector<spectrum::SpectrumReport>& reports,
                        const std::string& config_hash);
void write_singular_values_csv(std::ostream& out,
                               const std::vector<spectrum::SpectrumReport>& reports);

// Attention probe CSV: distance,mean_abs,max_abs,seen,config_hash,schema_version.
void write_probe_csv(std::ostream& out, const std::vector<spectrum::ProbeStat>& stats,
                     const std::string& config_hash);

struct PlotOptions {
  std::string title = "Exact-match accuracy by length";
  std::optional<std::string> timestamp;  // embedded only when set
  std::string config_hash;
};

/// Accuracy-vs-length SVG. One curve per (strategy, encoding, variant), the
/// mean over seeds at each length; the region up to train_max is shaded.
std::string accuracy_plot_svg(const std::vector<CurveRow>& rows, const PlotOptions& options);

/// Log-scale singular values against their index, one polyline per report.
std::string spectrum_plot_svg(const std::vector<spectrum::SpectrumReport>& reports,
                              const PlotOptions& options);

/// Writes text to a file, creating parent directories. RuntimeFailure on error.
void write_text(const std::filesystem::path& path, const std::string& text);

/// Fixed-format number rendering used across artifacts.
std::string fmt_fixed(double v, int decimals);
std::string fmt_real(double v);

}  // namespace rfs::io
