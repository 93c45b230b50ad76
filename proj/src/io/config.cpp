#include "rfs/io/config.hpp"

#include <cstdlib>
#include <fstream>

namespace rfs::io {

using nlohmann::json;

namespace {

json model_doc(const model::ModelConfig& m) {
  return json{{"n_layers", m.n_layers},
              {"n_heads", m.n_heads},
              {"d_model", m.d_model},
              {"d_ff", m.d_ff},
              {"dropout", m.dropout},
              {"encoding",
               {{"kind", std::string(encoding::to_string(m.encoding.kind))},
                {"rotary_dim", m.encoding.rotary_dim},
                {"base", m.encoding.base}}}};
}

json indexing_doc(const indexing::IndexingSpec& s, bool auto_scale) {
  return json{{"strategy", std::string(indexing::to_string(s.strategy))},
              {"distribution", json(s.distribution)},
              {"scale_L", auto_scale ? json("auto") : json(s.scale_L)},
              {"random_int_max", s.random_int_max}};
}

// Overlays `patch` on `base`. Objects merge key by key; everything else is
// replaced. Keys absent from `base` and type changes are errors.
void merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key " + here);
    json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, here);
      continue;
    }
    const bool both_numbers = slot.is_number() && value.is_number();
    const bool scale_auto = key == "scale_L" && (value.is_number() || value == "auto");
    if (!both_numbers && !scale_auto && slot.type() != value.type()) {
      throw ConfigError("config: " + here + " has type " + value.type_name() + ", expected " +
                        slot.type_name());
    }
    const bool whole = value.is_number_unsigned() ||
                       (value.is_number_integer() && value.get<std::int64_t>() >= 0);
    if (slot.is_number_unsigned() && value.is_number() && !whole) {
      throw ConfigError("config: " + here + " must be a non-negative integer");
    }
    slot = value;
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + "." + key + ": " + e.what());
  }
}

RunConfig decode(const json& d) {
  RunConfig c;
  c.preset = get<std::string>(d, "preset", "");
  c.output_dir = get<std::string>(d, "output_dir", "");
  c.deterministic = get<bool>(d, "deterministic", "");

  const json& m = d.at("model");
  c.model.n_layers = get<std::size_t>(m, "n_layers", "model");
  c.model.n_heads = get<std::size_t>(m, "n_heads", "model");
  c.model.d_model = get<std::size_t>(m, "d_model", "model");
  c.model.d_ff = get<std::size_t>(m, "d_ff", "model");
  c.model.dropout = get<double>(m, "dropout", "model");
  c.model.vocab_size = tasks::Vocab::standard().size();
  const json& e = m.at("encoding");
  c.model.encoding = encoding::EncodingSpec::make(
      encoding::parse_encoding(get<std::string>(e, "kind", "model.encoding")), c.model.d_model,
      c.model.n_heads, get<std::size_t>(e, "rotary_dim", "model.encoding"),
      get<double>(e, "base", "model.encoding"));

  const json& ix = d.at("indexing");
  c.model.indexing.strategy = indexing::parse_strategy(get<std::string>(ix, "strategy", "indexing"));
  try {
    c.model.indexing.distribution = ix.at("distribution").get<indexing::TrainDistribution>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: indexing.distribution: ") + ex.what());
  }
  if (ix.at("scale_L").is_string()) {
    c.auto_scale = true;
    c.model.indexing.scale_L = 1000.0;
  } else {
    c.model.indexing.scale_L = get<double>(ix, "scale_L", "indexing");
  }
  c.model.indexing.random_int_max = get<std::size_t>(ix, "random_int_max", "indexing");

  try {
    c.train = d.at("train").get<harness::TrainSpec>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: train: ") + ex.what());
  }

  const json& ds = d.at("data");
  c.data.task = tasks::parse_task(get<std::string>(ds, "task", "data"));
  c.data.n_train = get<std::size_t>(ds, "n_train", "data");
  c.data.n_test = get<std::size_t>(ds, "n_test", "data");
  c.data.train_max = get<std::size_t>(ds, "train_max", "data");
  c.data.test_max = get<std::size_t>(ds, "test_max", "data");
  c.data.seed = get<std::uint64_t>(ds, "seed", "data");

  const json& sw = d.at("sweep");
  c.sweep.strategies = get<std::vector<std::string>>(sw, "strategies", "sweep");
  c.sweep.encodings = get<std::vector<std::string>>(sw, "encodings", "sweep");
  c.sweep.tasks = get<std::vector<std::string>>(sw, "tasks", "sweep");
  c.sweep.seeds = get<std::vector<std::uint64_t>>(sw, "seeds", "sweep");
  for (const auto& s : c.sweep.strategies) indexing::parse_strategy(s);
  for (const auto& s : c.sweep.encodings) encoding::parse_encoding(s);
  for (const auto& s : c.sweep.tasks) tasks::parse_task(s);

  const json& ab = d.at("ablation");
  c.ablation.variants = get<std::vector<std::string>>(ab, "variants", "ablation");
  c.ablation.seeds = get<std::vector<std::uint64_t>>(ab, "seeds", "ablation");
  for (const auto& v : c.ablation.variants) {
    harness::Experiment probe;
    harness::apply_variant(probe, v);
  }

  const json& sp = d.at("spectrum");
  c.spectrum.d = get<std::size_t>(sp, "d", "spectrum");
  c.spectrum.range_L = get<double>(sp, "range_L", "spectrum");
  c.spectrum.tolerance = get<double>(sp, "tolerance", "spectrum");
  c.spectrum.lengths = get<std::vector<std::size_t>>(sp, "lengths", "spectrum");
  c.spectrum.strategies = get<std::vector<std::string>>(sp, "strategies", "spectrum");
  for (const auto& s : c.spectrum.strategies) indexing::parse_strategy(s);

  c.model.validate();
  c.model.indexing.validate();
  c.train.validate();
  if (c.data.train_max == 0 || c.data.train_max >= c.data.test_max) {
    throw ConfigError("config: data needs 1 <= train_max < test_max");
  }
  if (c.spectrum.d == 0 || c.spectrum.d % 2 != 0) {
    throw ConfigError("config: spectrum.d must be even and positive");
  }
  return c;
}

}  // namespace

DataSettings paper_data(tasks::Task task) {
  DataSettings d;
  d.task = task;
  d.n_train = 100000;
  d.n_test = 10000;
  switch (task) {
    case tasks::Task::Copy:
    case tasks::Task::Copy2:
    case tasks::Task::Reverse:
      d.train_max = 20;
      d.test_max = 40;
      break;
    case tasks::Task::ScanLite:
      d.n_train = 15997;
      d.n_test = 3136;
      d.train_max = 25;
      d.test_max = 48;
      break;
    default:
      d.train_max = 8;
      d.test_max = 16;
  }
  return d;
}

RunConfig RunConfig::from_preset(const std::string& name) {
  RunConfig c;
  const std::size_t vocab = tasks::Vocab::standard().size();
  if (name == "desk" || name == "fig6") {
    c.model = model::ModelConfig::desk(vocab, encoding::EncodingKind::RoPE);
    c.train = harness::TrainSpec::desk();
    c.output_dir = "runs/" + name;
  } else if (name == "paper") {
    c.model = model::ModelConfig::paper(vocab, encoding::EncodingKind::RoPE);
    c.train = harness::TrainSpec::paper();
    c.data = paper_data(tasks::Task::Copy);
    c.sweep.encodings = {"sinusoidal", "rope", "alibi", "nope"};
    c.sweep.tasks = {"copy", "copy2", "reverse", "addition", "sort", "summation", "scan"};
    c.ablation.variants = harness::known_variants();
    c.output_dir = "runs/paper";
  } else {
    throw ConfigError("config: unknown preset '" + name + "' (expected desk, paper or fig6)");
  }
  c.preset = name;
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"preset", c.preset},
              {"output_dir", c.output_dir},
              {"deterministic", c.deterministic},
              {"model", model_doc(c.model)},
              {"indexing", indexing_doc(c.model.indexing, c.auto_scale)},
              {"train", json(c.train)},
              {"data",
               {{"task", std::string(tasks::to_string(c.data.task))},
                {"n_train", c.data.n_train},
                {"n_test", c.data.n_test},
                {"train_max", c.data.train_max},
                {"test_max", c.data.test_max},
                {"seed", c.data.seed}}},
              {"sweep",
               {{"strategies", c.sweep.strategies},
                {"encodings", c.sweep.encodings},
                {"tasks", c.sweep.tasks},
                {"seeds", c.sweep.seeds}}},
              {"ablation", {{"variants", c.ablation.variants}, {"seeds", c.ablation.seeds}}},
              {"spectrum",
               {{"d", c.spectrum.d},
                {"range_L", c.spectrum.range_L},
                {"tolerance", c.spectrum.tolerance},
                {"lengths", c.spectrum.lengths},
                {"strategies", c.spectrum.strategies}}}};
}

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: document must be a JSON object");
  std::string preset = "desk";
  if (doc.contains("preset")) {
    if (!doc.at("preset").is_string()) throw ConfigError("config: .preset must be a string");
    preset = doc.at("preset").get<std::string>();
  }
  json merged = to_json(RunConfig::from_preset(preset));
  merge(merged, doc, "");
  return decode(merged);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

harness::Experiment RunConfig::experiment() const {
  harness::Experiment e;
  e.model = model;
  e.train = train;
  e.task = data.task;
  e.n_train = data.n_train;
  e.n_test = data.n_test;
  e.train_max = data.train_max;
  e.test_max = data.test_max;
  e.auto_scale = auto_scale;
  e.variant = "default";
  return e;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_json(*this).dump())); }

std::filesystem::path output_root() {
  const char* env = std::getenv("RFS_OUTPUT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path(".");
}

std::filesystem::path output_dir(const RunConfig& c) {
  const std::filesystem::path dir(c.output_dir);
  return dir.is_absolute() ? dir : output_root() / dir;
}

}  // namespace rfs::io
