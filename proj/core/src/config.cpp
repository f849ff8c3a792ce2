#include "feddap/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace feddap {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kFedDap: return "feddap";
    case Strategy::kFedAvg: return "fedavg";
    case Strategy::kFedProtoSingle: return "fedproto_single";
    case Strategy::kUniformDomainAvg: return "uniform_domain_avg";
  }
  throw std::logic_error("strategy_name: unreachable");
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "feddap") return Strategy::kFedDap;
  if (name == "fedavg") return Strategy::kFedAvg;
  if (name == "fedproto_single") return Strategy::kFedProtoSingle;
  if (name == "uniform_domain_avg") return Strategy::kUniformDomainAvg;
  throw ConfigError("unknown strategy '" + name +
                    "' (expected feddap, fedavg, fedproto_single, or "
                    "uniform_domain_avg)");
}

LossOptions ExperimentConfig::loss_options() const {
  LossOptions opt;
  opt.lambda1 = use_dpa ? lambda1 : 0.0;
  opt.lambda2 = use_cpcl ? lambda2 : 0.0;
  opt.tau_cross = tau_cross;
  opt.dpa_normalize = dpa_normalize;
  opt.dpa_per_sample = dpa_per_sample;
  opt.negatives_include_own_domain = negatives_include_own_domain;
  return opt;
}

DomainShiftParams ExperimentConfig::domain_shift_params() const {
  DomainShiftParams p;
  p.domains = static_cast<int>(data.domains);
  p.classes = static_cast<int>(data.classes);
  p.raw_dim = static_cast<int>(data.raw_dim);
  p.mean_radius = data.mean_radius;
  p.rotation_deg = data.domain_rotation_deg;
  p.scale_spread = data.domain_scale_spread;
  p.shift = data.domain_shift;
  p.noise_sigma = data.noise_sigma;
  return p;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string render_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::logic_error("render_double failed");
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
  double out;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("key '" + key + "': '" + v +
                      "' is not a non-negative integer");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

int parse_int(const std::string& key, const std::string& v) {
  int out;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_size(key, trim(item)));
  return out;
}

std::string render_size_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct KeyDesc {
  const char* section;
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<KeyDesc>& key_table() {
  static const std::vector<KeyDesc> table = [] {
    std::vector<KeyDesc> t;
    auto add = [&t](const char* section, const char* key, auto getter,
                    auto setter) {
      t.push_back({section, key, getter, setter});
    };

    // [run]
    add("run", "strategy",
        [](const ExperimentConfig& c) { return strategy_name(c.strategy); },
        [](ExperimentConfig& c, const std::string& v) {
          c.strategy = strategy_from_string(v);
        });
    add("run", "rounds",
        [](const ExperimentConfig& c) { return std::to_string(c.rounds); },
        [](ExperimentConfig& c, const std::string& v) {
          c.rounds = parse_size("rounds", v);
        });
    add("run", "local_epochs",
        [](const ExperimentConfig& c) {
          return std::to_string(c.local_epochs);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.local_epochs = parse_size("local_epochs", v);
        });
    add("run", "batch_size",
        [](const ExperimentConfig& c) { return std::to_string(c.batch_size); },
        [](ExperimentConfig& c, const std::string& v) {
          c.batch_size = parse_size("batch_size", v);
        });
    add("run", "lr",
        [](const ExperimentConfig& c) { return render_double(c.lr); },
        [](ExperimentConfig& c, const std::string& v) {
          c.lr = parse_double("lr", v);
        });
    add("run", "lambda1",
        [](const ExperimentConfig& c) { return render_double(c.lambda1); },
        [](ExperimentConfig& c, const std::string& v) {
          c.lambda1 = parse_double("lambda1", v);
        });
    add("run", "lambda2",
        [](const ExperimentConfig& c) { return render_double(c.lambda2); },
        [](ExperimentConfig& c, const std::string& v) {
          c.lambda2 = parse_double("lambda2", v);
        });
    add("run", "tau_agg",
        [](const ExperimentConfig& c) { return render_double(c.tau_agg); },
        [](ExperimentConfig& c, const std::string& v) {
          c.tau_agg = parse_double("tau_agg", v);
        });
    add("run", "tau_cross",
        [](const ExperimentConfig& c) { return render_double(c.tau_cross); },
        [](ExperimentConfig& c, const std::string& v) {
          c.tau_cross = parse_double("tau_cross", v);
        });
    add("run", "use_dpa",
        [](const ExperimentConfig& c) {
          return std::string(c.use_dpa ? "true" : "false");
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.use_dpa = parse_bool("use_dpa", v);
        });
    add("run", "use_cpcl",
        [](const ExperimentConfig& c) {
          return std::string(c.use_cpcl ? "true" : "false");
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.use_cpcl = parse_bool("use_cpcl", v);
        });
    add("run", "dpa_normalize",
        [](const ExperimentConfig& c) {
          return std::string(c.dpa_normalize ? "true" : "false");
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.dpa_normalize = parse_bool("dpa_normalize", v);
        });
    add("run", "dpa_per_sample",
        [](const ExperimentConfig& c) {
          return std::string(c.dpa_per_sample ? "true" : "false");
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.dpa_per_sample = parse_bool("dpa_per_sample", v);
        });
    add("run", "negatives_include_own_domain",
        [](const ExperimentConfig& c) {
          return std::string(c.negatives_include_own_domain ? "true"
                                                            : "false");
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.negatives_include_own_domain =
              parse_bool("negatives_include_own_domain", v);
        });
    add("run", "seed",
        [](const ExperimentConfig& c) { return std::to_string(c.seed); },
        [](ExperimentConfig& c, const std::string& v) {
          c.seed = parse_u64("seed", v);
        });
    add("run", "eval_every",
        [](const ExperimentConfig& c) { return std::to_string(c.eval_every); },
        [](ExperimentConfig& c, const std::string& v) {
          c.eval_every = parse_size("eval_every", v);
        });
    add("run", "checkpoint_every",
        [](const ExperimentConfig& c) {
          return std::to_string(c.checkpoint_every);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.checkpoint_every = parse_size("checkpoint_every", v);
        });
    add("run", "holdout_domain",
        [](const ExperimentConfig& c) {
          return std::to_string(c.holdout_domain);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.holdout_domain = parse_int("holdout_domain", v);
        });
    add("run", "dp_noise",
        [](const ExperimentConfig& c) {
          return std::string(c.dp_noise ? "true" : "false");
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.dp_noise = parse_bool("dp_noise", v);
        });
    add("run", "dp_q",
        [](const ExperimentConfig& c) { return render_double(c.dp_q); },
        [](ExperimentConfig& c, const std::string& v) {
          c.dp_q = parse_double("dp_q", v);
        });
    add("run", "dp_s",
        [](const ExperimentConfig& c) { return render_double(c.dp_s); },
        [](ExperimentConfig& c, const std::string& v) {
          c.dp_s = parse_double("dp_s", v);
        });

    // [model]
    add("model", "hidden_dims",
        [](const ExperimentConfig& c) {
          return render_size_list(c.hidden_dims);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.hidden_dims = parse_size_list("hidden_dims", v);
        });
    add("model", "feature_dim",
        [](const ExperimentConfig& c) {
          return std::to_string(c.feature_dim);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.feature_dim = parse_size("feature_dim", v);
        });

    // [data]
    add("data", "domains",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.domains);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.domains = parse_size("domains", v);
        });
    add("data", "classes",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.classes);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.classes = parse_size("classes", v);
        });
    add("data", "raw_dim",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.raw_dim);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.raw_dim = parse_size("raw_dim", v);
        });
    add("data", "samples_per_class_per_domain",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.samples_per_class_per_domain);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.samples_per_class_per_domain =
              parse_size("samples_per_class_per_domain", v);
        });
    add("data", "noise_sigma",
        [](const ExperimentConfig& c) {
          return render_double(c.data.noise_sigma);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.noise_sigma = parse_double("noise_sigma", v);
        });
    add("data", "mean_radius",
        [](const ExperimentConfig& c) {
          return render_double(c.data.mean_radius);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.mean_radius = parse_double("mean_radius", v);
        });
    add("data", "domain_rotation_deg",
        [](const ExperimentConfig& c) {
          return render_double(c.data.domain_rotation_deg);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.domain_rotation_deg = parse_double("domain_rotation_deg", v);
        });
    add("data", "domain_scale_spread",
        [](const ExperimentConfig& c) {
          return render_double(c.data.domain_scale_spread);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.domain_scale_spread = parse_double("domain_scale_spread", v);
        });
    add("data", "domain_shift",
        [](const ExperimentConfig& c) {
          return render_double(c.data.domain_shift);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.domain_shift = parse_double("domain_shift", v);
        });
    add("data", "clients_per_domain",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.clients_per_domain);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.clients_per_domain = parse_size("clients_per_domain", v);
        });
    add("data", "client_allocation",
        [](const ExperimentConfig& c) {
          return render_size_list(c.data.client_allocation);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.client_allocation = parse_size_list("client_allocation", v);
        });
    add("data", "test_fraction",
        [](const ExperimentConfig& c) {
          return render_double(c.data.test_fraction);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.test_fraction = parse_double("test_fraction", v);
        });
    add("data", "outlier_clients_per_domain",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.outlier_clients_per_domain);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.outlier_clients_per_domain =
              parse_size("outlier_clients_per_domain", v);
        });
    add("data", "outlier_noise_factor",
        [](const ExperimentConfig& c) {
          return render_double(c.data.outlier_noise_factor);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.outlier_noise_factor =
              parse_double("outlier_noise_factor", v);
        });
    add("data", "data_seed",
        [](const ExperimentConfig& c) {
          return std::to_string(c.data.data_seed);
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.data.data_seed = parse_u64("data_seed", v);
        });

    // [io]
    add("io", "out_dir",
        [](const ExperimentConfig& c) { return c.out_dir; },
        [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; });
    add("io", "run_name",
        [](const ExperimentConfig& c) { return c.run_name; },
        [](ExperimentConfig& c, const std::string& v) { c.run_name = v; });

    return t;
  }();
  return table;
}

const KeyDesc* find_key(const std::string& key) {
  for (const KeyDesc& d : key_table())
    if (key == d.key) return &d;
  return nullptr;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;

  auto fail = [&](const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;

    if (t.front() == '[') {
      if (t.back() != ']') fail("malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (section != "run" && section != "data" && section != "model" &&
          section != "io")
        fail("unknown section [" + section + "]");
      continue;
    }

    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) fail("expected key = value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) fail("empty key");
    if (section.empty()) fail("key '" + key + "' appears before any section");

    const KeyDesc* desc = find_key(key);
    if (!desc || section != desc->section)
      fail("unknown key '" + key + "' in section [" + section + "]");
    if (!seen.insert(key).second) fail("duplicate key '" + key + "'");

    try {
      desc->set(cfg, value);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

void apply_override(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value) {
  const KeyDesc* desc = find_key(key);
  if (!desc) throw ConfigError("unknown config key '" + key + "'");
  desc->set(cfg, value);
}

void validate(ExperimentConfig& cfg) {
  if (cfg.strategy == Strategy::kFedAvg) {
    cfg.use_dpa = false;
    cfg.use_cpcl = false;
  }

  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };

  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  require(cfg.lr >= 0.0, "lr must be >= 0");
  require(cfg.lambda1 >= 0.0, "lambda1 must be >= 0");
  require(cfg.lambda2 >= 0.0, "lambda2 must be >= 0");
  require(cfg.tau_agg > 0.0, "tau_agg must be > 0");
  require(cfg.tau_cross > 0.0, "tau_cross must be > 0");
  require(cfg.eval_every >= 1, "eval_every must be >= 1");
  require(cfg.dp_q >= 0.0, "dp_q must be >= 0");
  require(cfg.dp_s >= 0.0, "dp_s must be >= 0");
  require(cfg.feature_dim >= 1, "feature_dim must be >= 1");
  for (std::size_t h : cfg.hidden_dims)
    require(h >= 1, "hidden_dims entries must be >= 1");

  const DataConfig& d = cfg.data;
  require(d.domains >= 1, "domains must be >= 1");
  require(d.classes >= 2, "classes must be >= 2");
  require(d.raw_dim >= 1, "raw_dim must be >= 1");
  require(d.samples_per_class_per_domain >= 2,
          "samples_per_class_per_domain must be >= 2");
  require(d.noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(d.mean_radius > 0.0, "mean_radius must be > 0");
  require(d.domain_rotation_deg >= 0.0, "domain_rotation_deg must be >= 0");
  require(d.domain_scale_spread >= 0.0 && d.domain_scale_spread < 1.0,
          "domain_scale_spread must be in [0, 1)");
  require(d.domain_shift >= 0.0, "domain_shift must be >= 0");
  require(d.clients_per_domain >= 1, "clients_per_domain must be >= 1");
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0,
          "test_fraction must be in (0, 1)");
  if (!d.client_allocation.empty()) {
    require(d.client_allocation.size() == d.domains,
            "client_allocation must list one count per domain");
    for (std::size_t c : d.client_allocation)
      require(c >= 1, "client_allocation entries must be >= 1");
  }
  const std::size_t min_clients =
      d.client_allocation.empty()
          ? d.clients_per_domain
          : *std::min_element(d.client_allocation.begin(),
                              d.client_allocation.end());
  require(d.outlier_clients_per_domain <= min_clients,
          "outlier_clients_per_domain exceeds clients in some domain");
  require(d.outlier_noise_factor >= 1.0, "outlier_noise_factor must be >= 1");
  require(cfg.holdout_domain >= -1 &&
              cfg.holdout_domain < static_cast<int>(d.domains),
          "holdout_domain must be -1 or a valid domain id");
  if (cfg.holdout_domain >= 0)
    require(d.domains >= 2, "holdout requires at least 2 domains");
}

std::vector<std::pair<std::string, std::string>> config_entries(
    const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const KeyDesc& d : key_table()) out.emplace_back(d.key, d.get(cfg));
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [key, value] : config_entries(cfg)) {
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return h;
}

}  // namespace feddap
