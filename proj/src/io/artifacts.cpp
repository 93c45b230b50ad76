#include "rfs/io/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rfs/io/config.hpp"

namespace rfs::io {

using nlohmann::json;

const char* const kCurveHeader =
    "strategy,encoding,task,length,seed,accuracy,variant,train_max,config_hash,schema_version";
const char* const kSpectrumHeader =
    "strategy,n,d,range_L,tolerance,numerical_rank,sigma_max,sigma_min,config_hash,"
    "schema_version";

std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  return in;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

void write_dataset_jsonl(std::ostream& out, const tasks::Dataset& data,
                         const std::string& config_hash) {
  json meta{{"kind", "dataset-meta"},
            {"schema_version", kArtifactSchemaVersion},
            {"config_hash", config_hash},
            {"seed", data.seed},
            {"task", std::string(tasks::to_string(data.task))},
            {"n_train", data.train.size()},
            {"n_test", data.test.size()},
            {"train_max", data.train_max},
            {"test_max", data.test_max}};
  out << meta.dump() << '\n';
  auto rows = [&](const std::vector<tasks::TaskSample>& split, const char* name) {
    for (const auto& s : split) {
      out << json{{"set", name},
                  {"task", std::string(tasks::to_string(s.task))},
                  {"length", s.length},
                  {"split", std::string(tasks::to_string(s.split))},
                  {"prompt", s.prompt},
                  {"target", s.target}}
                 .dump()
          << '\n';
    }
  };
  rows(data.train, "train");
  rows(data.test, "test");
}

void write_dataset_jsonl(const std::filesystem::path& path, const tasks::Dataset& data,
                         const std::string& config_hash) {
  std::ostringstream ss;
  write_dataset_jsonl(ss, data, config_hash);
  write_text(path, ss.str());
}

tasks::Dataset read_dataset_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw RuntimeFailure(path.string() + ": empty dataset file");
  tasks::Dataset d;
  try {
    const json meta = json::parse(line);
    if (meta.value("kind", "") != "dataset-meta") {
      throw RuntimeFailure(path.string() + ": missing dataset header line");
    }
    d.task = tasks::parse_task(meta.at("task").get<std::string>());
    d.seed = meta.at("seed").get<std::uint64_t>();
    d.train_max = meta.at("train_max").get<std::size_t>();
    d.test_max = meta.at("test_max").get<std::size_t>();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json row = json::parse(line);
      const std::string set = row.at("set").get<std::string>();
      const std::size_t len = row.at("length").get<std::size_t>();
      const auto task = tasks::parse_task(row.value("task", std::string(tasks::to_string(d.task))));
      auto sample = tasks::make_sample(
          task, row.at("prompt").get<std::string>(), row.at("target").get<std::string>(), len,
          tasks::parse_split(row.at("split").get<std::string>()));
      if (set == "train") {
        d.train.push_back(std::move(sample));
      } else if (set == "test") {
        d.test.push_back(std::move(sample));
      } else {
        throw RuntimeFailure(path.string() + ":" + std::to_string(lineno) + ": bad set '" +
                             set + "'");
      }
    }
  } catch (const json::exception& e) {
    throw RuntimeFailure(path.string() + ": malformed dataset: " + e.what());
  } catch (const ConfigError& e) {
    throw RuntimeFailure(path.string() + ": malformed dataset: " + e.what());
  }
  return d;
}

void append_ledger(const std::filesystem::path& path, const harness::RunRecord& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw RuntimeFailure("cannot append to " + path.string());
  out << json(record).dump() << '\n';
}

std::vector<harness::RunRecord> read_ledger(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<harness::RunRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<harness::RunRecord>());
    } catch (const json::exception& e) {
      throw RuntimeFailure(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CurveRow> curve_rows(const harness::RunRecord& r) {
  std::vector<CurveRow> rows;
  for (const auto& [len, acc] : r.accuracy) {
    rows.push_back(CurveRow{r.strategy, r.encoding, r.task, len, r.seed, acc, r.variant,
                            r.train_max, r.config_hash, r.schema_version});
  }
  return rows;
}

void write_curves_csv(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << kCurveHeader << '\n';
  for (const auto& r : rows) {
    out << r.strategy << ',' << r.encoding << ',' << r.task << ',' << r.length << ',' << r.seed
        << ',' << fmt_fixed(r.accuracy, 6) << ',' << r.variant << ',' << r.train_max << ','
        << r.config_hash << ',' << r.schema_version << '\n';
  }
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveRow>& rows) {
  std::ostringstream ss;
  write_curves_csv(ss, rows);
  write_text(path, ss.str());
}

std::vector<CurveRow> read_curves_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) {
    throw RuntimeFailure(path.string() + ": not a curves CSV (header mismatch)");
  }
  std::vector<CurveRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 10) {
      throw RuntimeFailure(path.string() + ":" + std::to_string(lineno) + ": expected 10 fields");
    }
    try {
      rows.push_back(CurveRow{f[0], f[1], f[2], std::stoul(f[3]), std::stoull(f[4]),
                              std::stod(f[5]), f[6], std::stoul(f[7]), f[8], std::stoi(f[9])});
    } catch (const std::exception&) {
      throw RuntimeFailure(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

void write_spectrum_csv(std::ostream& out, const std::vector<spectrum::SpectrumReport>& reports,
                        const std::string& config_hash) {
  out << kSpectrumHeader << '\n';
  for (const auto& r : reports) {
    const double top = r.singular_values.empty() ? 0.0 : r.singular_values.front();
    const double low = r.singular_values.empty() ? 0.0 : r.singular_values.back();
    out << indexing::to_string(r.strategy) << ',' << r.n << ',' << r.d << ',' << fmt_real(r.range_L)
        << ',' << fmt_real(r.tolerance) << ',' << r.numerical_rank << ',' << fmt_real(top) << ','
        << fmt_real(low) << ',' << config_hash << ',' << kArtifactSchemaVersion << '\n';
  }
}

void write_singular_values_csv(std::ostream& out,
                               const std::vector<spectrum::SpectrumReport>& reports) {
  out << "strategy,n,index,sigma\n";
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.singular_values.size(); ++i) {
      out << indexing::to_string(r.strategy) << ',' << r.n << ',' << i << ','
          << fmt_real(r.singular_values[i]) << '\n';
    }
  }
}

void write_probe_csv(std::ostream& out, const std::vector<spectrum::ProbeStat>& stats,
                     const std::string& config_hash) {
  out << "distance,mean_abs,max_abs,seen,config_hash,schema_version\n";
  for (const auto& s : stats) {
    out << fmt_real(s.distance) << ',' << fmt_real(s.mean_abs) << ',' << fmt_real(s.max_abs) << ','
        << (s.seen ? "true" : "false") << ',' << config_hash << ',' << kArtifactSchemaVersion
        << '\n';
  }
}

namespace {

struct Frame {
  double width = 760, height = 440;
  double left = 64, right = 200, top = 44, bottom = 56;
  double x0, x1, y0, y1;
  bool log_y = false;

  double px(double x) const {
    const double span = x1 > x0 ? x1 - x0 : 1.0;
    return left + (x - x0) / span * (width - left - right);
  }
  double py(double y) const {
    double a = y0, b = y1, v = y;
    if (log_y) {
      a = std::log10(a);
      b = std::log10(b);
      v = std::log10(std::max(v, y0));
    }
    const double span = b > a ? b - a : 1.0;
    return height - bottom - (v - a) / span * (height - top - bottom);
  }
};

void svg_open(std::ostringstream& s, const Frame& f, const PlotOptions& o) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
    << f.height << "\" viewBox=\"0 0 " << f.width << ' ' << f.height << "\">\n";
  s << "<desc>config_hash=" << xml_escape(o.config_hash)
    << " schema_version=" << kArtifactSchemaVersion << "</desc>\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << f.left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
    << xml_escape(o.title) << "</text>\n";
  if (o.timestamp) {
    s << "<text x=\"" << f.width - 8 << "\" y=\"" << f.height - 6
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\" fill=\"#888\">"
      << xml_escape(*o.timestamp) << "</text>\n";
  }
}

void svg_axes(std::ostringstream& s, const Frame& f, const std::string& xlabel,
              const std::string& ylabel) {
  const double xa = f.left, xb = f.width - f.right, ya = f.top, yb = f.height - f.bottom;
  s << "<g stroke=\"black\" fill=\"none\"><line x1=\"" << xa << "\" y1=\"" << yb << "\" x2=\""
    << xb << "\" y2=\"" << yb << "\"/><line x1=\"" << xa << "\" y1=\"" << ya << "\" x2=\"" << xa
    << "\" y2=\"" << yb << "\"/></g>\n";
  s << "<text x=\"" << (xa + xb) / 2 << "\" y=\"" << f.height - 14
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel
    << "</text>\n";
  s << "<text x=\"16\" y=\"" << (ya + yb) / 2 << "\" transform=\"rotate(-90 16 " << (ya + yb) / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << ylabel
    << "</text>\n";
}

void svg_tick_x(std::ostringstream& s, const Frame& f, double x, const std::string& label) {
  const double yb = f.height - f.bottom;
  s << "<line x1=\"" << fmt_fixed(f.px(x), 2) << "\" y1=\"" << yb << "\" x2=\""
    << fmt_fixed(f.px(x), 2) << "\" y2=\"" << yb + 4 << "\" stroke=\"black\"/>"
    << "<text x=\"" << fmt_fixed(f.px(x), 2) << "\" y=\"" << yb + 16
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << label
    << "</text>\n";
}

void svg_tick_y(std::ostringstream& s, const Frame& f, double y, const std::string& label) {
  s << "<line x1=\"" << f.left - 4 << "\" y1=\"" << fmt_fixed(f.py(y), 2) << "\" x2=\"" << f.left
    << "\" y2=\"" << fmt_fixed(f.py(y), 2) << "\" stroke=\"black\"/>"
    << "<text x=\"" << f.left - 7 << "\" y=\"" << fmt_fixed(f.py(y) + 3, 2)
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << label
    << "</text>\n";
}

void svg_legend(std::ostringstream& s, const Frame& f, std::size_t i, const std::string& label) {
  const double x = f.width - f.right + 14, y = f.top + 8 + 18.0 * static_cast<double>(i);
  s << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 22 << "\" y2=\"" << y
    << "\" stroke=\"" << kPalette[i % 10] << "\" stroke-width=\"2\"/>"
    << "<text x=\"" << x + 28 << "\" y=\"" << y + 4
    << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(label) << "</text>\n";
}

}  // namespace

std::string accuracy_plot_svg(const std::vector<CurveRow>& rows, const PlotOptions& options) {
  std::set<std::string> task_names;
  for (const auto& r : rows) task_names.insert(r.task);
  // curve label -> length -> accuracies over seeds
  std::map<std::string, std::map<std::size_t, std::vector<double>>> curves;
  std::size_t train_max = 0, lo = 0, hi = 0;
  for (const auto& r : rows) {
    std::string label = r.strategy + " / " + r.encoding;
    if (!r.variant.empty() && r.variant != "default") label += " / " + r.variant;
    if (task_names.size() > 1) label = r.task + ": " + label;
    curves[label][r.length].push_back(r.accuracy);
    train_max = std::max(train_max, r.train_max);
    lo = lo == 0 ? r.length : std::min(lo, r.length);
    hi = std::max(hi, r.length);
  }
  Frame f;
  f.x0 = static_cast<double>(lo ? lo : 1);
  f.x1 = static_cast<double>(std::max(hi, lo + 1));
  f.y0 = 0.0;
  f.y1 = 1.0;

  std::ostringstream s;
  svg_open(s, f, options);
  if (train_max > 0 && !rows.empty()) {
    const double a = f.px(f.x0), b = f.px(std::min(static_cast<double>(train_max), f.x1));
    s << "<rect class=\"seen\" x=\"" << fmt_fixed(a, 2) << "\" y=\"" << f.top << "\" width=\""
      << fmt_fixed(b - a, 2) << "\" height=\"" << f.height - f.top - f.bottom
      << "\" fill=\"#dddddd\" data-train-max=\"" << train_max << "\"/>\n";
  }
  svg_axes(s, f, "length", "exact-match accuracy");
  for (int k = 0; k <= 4; ++k) svg_tick_y(s, f, k / 4.0, std::to_string(25 * k) + "%");
  const std::size_t step = std::max<std::size_t>(1, (hi - lo + 1) / 10);
  for (std::size_t x = lo; x <= hi && lo > 0; x += step) {
    svg_tick_x(s, f, static_cast<double>(x), std::to_string(x));
  }
  std::size_t i = 0;
  for (const auto& [label, by_len] : curves) {
    s << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << kPalette[i % 10]
      << "\" stroke-width=\"2\" data-label=\"" << xml_escape(label) << "\" points=\"";
    bool first = true;
    for (const auto& [len, accs] : by_len) {
      double m = 0.0;
      for (double a : accs) m += a;
      m /= static_cast<double>(accs.size());
      s << (first ? "" : " ") << fmt_fixed(f.px(static_cast<double>(len)), 2) << ','
        << fmt_fixed(f.py(m), 2);
      first = false;
    }
    s << "\"/>\n";
    svg_legend(s, f, i, label);
    ++i;
  }
  s << "</svg>\n";
  return s.str();
}

std::string spectrum_plot_svg(const std::vector<spectrum::SpectrumReport>& reports,
                              const PlotOptions& options) {
  Frame f;
  f.log_y = true;
  f.x0 = 0.0;
  f.x1 = 1.0;
  double top = 0.0, bottom = 0.0;
  for (const auto& r : reports) {
    f.x1 = std::max(f.x1, static_cast<double>(r.singular_values.size()));
    if (r.singular_values.empty()) continue;
    top = std::max(top, r.singular_values.front());
    const double floor = r.tolerance * r.singular_values.front() * 1e-2;
    bottom = bottom == 0.0 ? floor : std::min(bottom, floor);
  }
  if (!(top > 0.0)) top = 1.0;
  if (!(bottom > 0.0) || bottom >= top) bottom = top * 1e-10;
  f.y0 = std::pow(10.0, std::floor(std::log10(bottom)));
  f.y1 = std::pow(10.0, std::ceil(std::log10(top)));

  std::ostringstream s;
  svg_open(s, f, options);
  svg_axes(s, f, "singular value index", "singular value (log scale)");
  for (double e = std::log10(f.y0); e <= std::log10(f.y1) + 1e-9; e += 2.0) {
    svg_tick_y(s, f, std::pow(10.0, e), "1e" + std::to_string(static_cast<int>(std::lround(e))));
  }
  for (int k = 0; k <= 4; ++k) {
    const double x = f.x1 * k / 4.0;
    svg_tick_x(s, f, x, std::to_string(static_cast<long>(std::lround(x))));
  }
  std::size_t i = 0;
  for (const auto& r : reports) {
    const std::string label = std::string(indexing::to_string(r.strategy)) + " n=" +
                              std::to_string(r.n) + " rank " + std::to_string(r.numerical_rank);
    const bool rfs = r.strategy == indexing::Strategy::RFS;
    s << "<polyline fill=\"none\" stroke=\"" << kPalette[i % 10] << "\" stroke-width=\"1.5\""
      << (rfs ? " stroke-dasharray=\"5 3\"" : "") << " data-label=\"" << xml_escape(label)
      << "\" points=\"";
    for (std::size_t k = 0; k < r.singular_values.size(); ++k) {
      s << (k ? " " : "") << fmt_fixed(f.px(static_cast<double>(k)), 2) << ','
        << fmt_fixed(f.py(r.singular_values[k]), 2);
    }
    s << "\"/>\n";
    svg_legend(s, f, i, label);
    ++i;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace rfs::io
