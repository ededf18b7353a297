#include "defrec/config.hpp"

#include <json.hpp>

#include <set>

#include "defrec/errors.hpp"
#include "defrec/fs_util.hpp"

namespace defrec {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(Task task) { return task == Task::Classification ? "classification" : "segmentation"; }

std::string to_string(DefRecOn on) { return on == DefRecOn::TargetOnly ? "target" : "source-and-target"; }

std::string to_string(SampleScheme scheme) {
  switch (scheme) {
    case SampleScheme::Split: return "split";
    case SampleScheme::Gradient: return "gradient";
    case SampleScheme::Lambertian: return "lambertian";
  }
  return "unknown";
}

int RunConfig::resolved_points() const {
  if (points > 0) return points;
  return train.task == Task::Classification ? 1024 : 2048;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.train == b.train && a.run_id == b.run_id && a.source_path == b.source_path &&
         a.target_path == b.target_path && a.target_test_path == b.target_test_path && a.out_dir == b.out_dir &&
         a.points == b.points && a.grid == b.grid;
}

namespace {

/// Walks one JSON object, remembering which keys were read so leftovers are rejected.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "top level must be an object" : "expected an object");
  }

  ~ObjectReader() = default;

  bool has(const char* key) const { return j_.contains(key); }

  template <class F>
  void with(const char* key, F&& fn) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    fn(j_.at(key), child(key));
  }

  void number(const char* key, double& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (!v.is_number()) fail_at(p, "expected a number");
      out = v.get<double>();
    });
  }

  void integer(const char* key, int& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (!v.is_number_integer()) fail_at(p, "expected an integer");
      const auto x = v.get<long long>();
      if (x < INT32_MIN || x > INT32_MAX) fail_at(p, "integer out of range");
      out = static_cast<int>(x);
    });
  }

  void u64(const char* key, std::uint64_t& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (v.is_number_unsigned()) {
        out = v.get<std::uint64_t>();
      } else if (v.is_number_integer() && v.get<long long>() >= 0) {
        out = static_cast<std::uint64_t>(v.get<long long>());
      } else {
        fail_at(p, "expected a non-negative integer");
      }
    });
  }

  void boolean(const char* key, bool& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (!v.is_boolean()) fail_at(p, "expected true or false");
      out = v.get<bool>();
    });
  }

  void string(const char* key, std::string& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (!v.is_string()) fail_at(p, "expected a string");
      out = v.get<std::string>();
    });
  }

  void ints(const char* key, std::vector<int>& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (!v.is_array()) fail_at(p, "expected an array of integers");
      out.clear();
      for (const auto& x : v) {
        if (!x.is_number_integer()) fail_at(p, "expected an array of integers");
        out.push_back(x.get<int>());
      }
    });
  }

  void numbers(const char* key, std::vector<double>& out) {
    with(key, [&](const json& v, const std::string& p) {
      if (!v.is_array()) fail_at(p, "expected an array of numbers");
      out.clear();
      for (const auto& x : v) {
        if (!x.is_number()) fail_at(p, "expected an array of numbers");
        out.push_back(x.get<double>());
      }
    });
  }

  /// Reject keys nobody asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail_at(child(key.c_str()), "unknown key");
  }

  [[noreturn]] void fail(const std::string& msg) const { fail_at(path_, msg); }

  [[noreturn]] static void fail_at(const std::string& path, const std::string& msg) {
    throw InvalidArgument("config: " + (path.empty() ? std::string() : path + ": ") + msg);
  }

 private:
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E parse_enum(const json& v, const std::string& path, std::initializer_list<std::pair<const char*, E>> options) {
  if (!v.is_string()) ObjectReader::fail_at(path, "expected a string");
  const auto s = v.get<std::string>();
  std::string allowed;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    allowed += allowed.empty() ? name : std::string(", ") + name;
  }
  ObjectReader::fail_at(path, "unknown value '" + s + "' (expected one of: " + allowed + ")");
}

DeformKind parse_kind(const json& v, const std::string& path) {
  if (!v.is_string()) ObjectReader::fail_at(path, "expected a string");
  try {
    return deform_kind_from_string(v.get<std::string>());
  } catch (const Error& e) {
    ObjectReader::fail_at(path, e.what());
  }
}

void read_deform(const json& j, const std::string& path, DeformSpec& d) {
  ObjectReader r(j, path);
  r.with("kind", [&](const json& v, const std::string& p) { d.kind = parse_kind(v, p); });
  r.integer("voxel_k", d.voxel_k);
  r.number("radius", d.radius);
  r.integer("feature_layer", d.feature_layer);
  r.integer("feature_k", d.feature_k);
  r.number("relocate_sigma", d.relocate_sigma);
  r.number("sample_cap_fraction", d.sample_cap_fraction);
  r.integer("normal_k", d.normal_k);
  r.with("mixed_volume", [&](const json& v, const std::string& p) { d.mixed_volume = parse_kind(v, p); });
  r.with("mixed_sample", [&](const json& v, const std::string& p) {
    d.mixed_sample = parse_enum<SampleScheme>(
        v, p, {{"split", SampleScheme::Split}, {"gradient", SampleScheme::Gradient}, {"lambertian", SampleScheme::Lambertian}});
  });
  r.finish();
}

void read_network(const json& j, const std::string& path, NetworkShape& n) {
  ObjectReader r(j, path);
  r.integer("num_classes", n.num_classes);
  r.ints("point_widths", n.point_widths);
  r.integer("global_width", n.global_width);
  r.ints("sup_widths", n.sup_widths);
  r.ints("ssl_widths", n.ssl_widths);
  r.ints("seg_widths", n.seg_widths);
  r.number("dropout", n.dropout);
  r.finish();
}

void read_train(const json& j, const std::string& path, TrainConfig& t) {
  ObjectReader r(j, path);
  r.number("lambda", t.lambda);
  r.number("lr", t.lr);
  r.number("weight_decay", t.weight_decay);
  r.integer("epochs", t.epochs);
  r.integer("batch_size", t.batch_size);
  r.with("pcm", [&](const json& v, const std::string& p) {
    ObjectReader pr(v, p);
    pr.boolean("enabled", t.pcm_enabled);
    pr.number("alpha", t.pcm_alpha);
    pr.number("beta", t.pcm_beta);
    pr.finish();
  });
  r.with("defrec_on", [&](const json& v, const std::string& p) {
    t.defrec_on = parse_enum<DefRecOn>(v, p, {{"target", DefRecOn::TargetOnly},
                                              {"source-and-target", DefRecOn::SourceAndTarget}});
  });
  r.with("augment", [&](const json& v, const std::string& p) {
    ObjectReader ar(v, p);
    ar.boolean("enabled", t.augment);
    ar.number("jitter_sigma", t.jitter_sigma);
    ar.number("jitter_clip", t.jitter_clip);
    ar.finish();
  });
  r.boolean("combined_step", t.combined_step);
  r.integer("workers", t.workers);
  r.number("val_fraction", t.val_fraction);
  r.with("deform", [&](const json& v, const std::string& p) { read_deform(v, p, t.deform); });
  r.with("network", [&](const json& v, const std::string& p) { read_network(v, p, t.network); });
  r.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(j, "");
  r.with("task", [&](const json& v, const std::string& p) {
    c.train.task = parse_enum<Task>(v, p, {{"classification", Task::Classification}, {"segmentation", Task::Segmentation}});
  });
  r.u64("seed", c.train.seed);
  r.string("run_id", c.run_id);
  r.integer("points", c.points);
  r.string("out_dir", c.out_dir);
  r.with("data", [&](const json& v, const std::string& p) {
    ObjectReader dr(v, p);
    dr.string("source", c.source_path);
    dr.string("target", c.target_path);
    dr.string("target_test", c.target_test_path);
    dr.finish();
  });
  r.with("train", [&](const json& v, const std::string& p) { read_train(v, p, c.train); });
  r.with("grid", [&](const json& v, const std::string& p) {
    ObjectReader gr(v, p);
    gr.numbers("lambda", c.grid.lambda);
    gr.numbers("lr", c.grid.lr);
    gr.numbers("weight_decay", c.grid.weight_decay);
    gr.finish();
  });
  r.finish();

  if (c.points < 0) ObjectReader::fail_at("points", "must be >= 0");
  for (double l : c.grid.lambda)
    if (!(l >= 0.0)) ObjectReader::fail_at("grid.lambda", "values must be >= 0");
  for (double l : c.grid.lr)
    if (!(l > 0.0)) ObjectReader::fail_at("grid.lr", "values must be > 0");
  for (double w : c.grid.weight_decay)
    if (!(w >= 0.0)) ObjectReader::fail_at("grid.weight_decay", "values must be >= 0");
  try {
    c.train.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text(path)); }

std::string serialize_run_config(const RunConfig& c) {
  const TrainConfig& t = c.train;
  ordered_json j;
  j["task"] = to_string(t.task);
  j["seed"] = t.seed;
  j["run_id"] = c.run_id;
  j["points"] = c.points;
  j["out_dir"] = c.out_dir;
  j["data"] = {{"source", c.source_path}, {"target", c.target_path}, {"target_test", c.target_test_path}};
  ordered_json tr;
  tr["lambda"] = t.lambda;
  tr["lr"] = t.lr;
  tr["weight_decay"] = t.weight_decay;
  tr["epochs"] = t.epochs;
  tr["batch_size"] = t.batch_size;
  tr["pcm"] = {{"enabled", t.pcm_enabled}, {"alpha", t.pcm_alpha}, {"beta", t.pcm_beta}};
  tr["defrec_on"] = to_string(t.defrec_on);
  tr["augment"] = {{"enabled", t.augment}, {"jitter_sigma", t.jitter_sigma}, {"jitter_clip", t.jitter_clip}};
  tr["combined_step"] = t.combined_step;
  tr["workers"] = t.workers;
  tr["val_fraction"] = t.val_fraction;
  const DeformSpec& d = t.deform;
  tr["deform"] = {{"kind", to_string(d.kind)},
                  {"voxel_k", d.voxel_k},
                  {"radius", d.radius},
                  {"feature_layer", d.feature_layer},
                  {"feature_k", d.feature_k},
                  {"relocate_sigma", d.relocate_sigma},
                  {"sample_cap_fraction", d.sample_cap_fraction},
                  {"normal_k", d.normal_k},
                  {"mixed_volume", to_string(d.mixed_volume)},
                  {"mixed_sample", to_string(d.mixed_sample)}};
  const NetworkShape& n = t.network;
  tr["network"] = {{"num_classes", n.num_classes}, {"point_widths", n.point_widths}, {"global_width", n.global_width},
                   {"sup_widths", n.sup_widths},   {"ssl_widths", n.ssl_widths},     {"seg_widths", n.seg_widths},
                   {"dropout", n.dropout}};
  j["train"] = tr;
  j["grid"] = {{"lambda", c.grid.lambda}, {"lr", c.grid.lr}, {"weight_decay", c.grid.weight_decay}};
  return j.dump(2) + "\n";
}

std::vector<TrainConfig> expand_grid(const RunConfig& config) {
  const auto axis = [](const std::vector<double>& values, double base) {
    return values.empty() ? std::vector<double>{base} : values;
  };
  std::vector<TrainConfig> out;
  for (double lambda : axis(config.grid.lambda, config.train.lambda))
    for (double lr : axis(config.grid.lr, config.train.lr))
      for (double wd : axis(config.grid.weight_decay, config.train.weight_decay)) {
        TrainConfig t = config.train;
        t.lambda = lambda;
        t.lr = lr;
        t.weight_decay = wd;
        out.push_back(t);
      }
  return out;
}

}  // namespace defrec
