#pragma once
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "helmbench/krylov.hpp"
#include "helmbench/multigrid.hpp"
#include "helmbench/training.hpp"
#include "helmbench/unet.hpp"

namespace helm {

// Textual key = value experiment configuration with fixed sections.
// Unknown sections or keys are hard errors.
class ExperimentConfig {
 public:
  static const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"grid", {"nx", "ny", "abl_width", "gamma_max"}},
        {"frequency", {"omega_pi"}},
        {"slowness", {"kind", "path", "lo", "hi", "seed", "count"}},
        {"vcycle",
         {"levels", "nu1", "nu2", "damping", "alpha", "beta", "coarse_iters", "coarse_solver"}},
        {"krylov", {"restart", "max_iters", "rel_tol", "flexible", "block_size"}},
        {"network", {"levels", "base_channels", "resnet_per_level", "bottleneck_resnets", "mode"}},
        {"training",
         {"epochs", "lr0", "batch0", "t0", "val_fraction", "seed", "samples_per_model", "models",
          "augment_per_model", "retrain_pairs", "retrain_epochs"}},
    };
    return s;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto sec = schema().find(section);
    if (sec == schema().end()) throw std::invalid_argument("unknown config section [" + section + "]");
    if (!sec->second.count(key))
      throw std::invalid_argument("unknown key '" + key + "' in section [" + section + "]");
    values_[section][key] = value;
  }

  static ExperimentConfig parse(std::istream& is) {
    ExperimentConfig cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw std::invalid_argument("bad section header at line " + std::to_string(lineno));
        section = line.substr(1, line.size() - 2);
        if (!schema().count(section))
          throw std::invalid_argument("unknown config section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("expected key = value at line " + std::to_string(lineno));
      if (section.empty()) throw std::invalid_argument("key outside any section at line " + std::to_string(lineno));
      cfg.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static ExperimentConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    return parse(is);
  }

  // "section.key=value" override (CLI flags)
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw std::invalid_argument("override must look like section.key=value");
    set(assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1),
        assignment.substr(eq + 1));
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    auto s = values_.find(section);
    if (s == values_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }
  double get_num(const std::string& section, const std::string& key, double fallback) const {
    const std::string v = get(section, key, "");
    if (v.empty()) return fallback;
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("bad number for " + section + "." + key);
    return x;
  }
  int get_int(const std::string& section, const std::string& key, int fallback) const {
    return int(std::llround(get_num(section, key, double(fallback))));
  }
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const std::string v = get(section, key, fallback ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("bad boolean for " + section + "." + key);
  }

  // canonical text form; also the digest input
  std::string canonical() const {
    std::ostringstream os;
    for (const auto& [section, kv] : values_) {
      os << '[' << section << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    }
    return os.str();
  }

  std::string digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }

  // ---- typed views with the spec defaults ----

  int grid_nx() const { return get_int("grid", "nx", 128); }
  int grid_ny() const { return get_int("grid", "ny", 128); }
  int abl_width() const { return get_int("grid", "abl_width", 10); }
  double gamma_max() const { return get_num("grid", "gamma_max", 0.5); }
  double omega() const { return get_num("frequency", "omega_pi", 20.0) * M_PI; }

  VCycleConfig vcycle() const {
    VCycleConfig v;
    v.levels = get_int("vcycle", "levels", 3);
    v.nu1 = get_int("vcycle", "nu1", 1);
    v.nu2 = get_int("vcycle", "nu2", 1);
    v.damping = get_num("vcycle", "damping", 0.8);
    v.shift = Shift{get_num("vcycle", "alpha", 1.0), get_num("vcycle", "beta", 0.5)};
    v.coarse_iters = get_int("vcycle", "coarse_iters", 10);
    const std::string cs = get("vcycle", "coarse_solver", "gmres");
    if (cs == "gmres") v.coarse_solver = CoarseSolver::gmres;
    else if (cs == "dense") v.coarse_solver = CoarseSolver::dense;
    else throw std::invalid_argument("vcycle.coarse_solver must be gmres or dense");
    return v;
  }

  KrylovConfig krylov() const {
    KrylovConfig k;
    k.restart = get_int("krylov", "restart", 10);
    k.max_iters = get_int("krylov", "max_iters", 400);
    k.rel_tol = get_num("krylov", "rel_tol", 1e-6);
    k.flexible = get_bool("krylov", "flexible", true);
    return k;
  }
  int block_size() const { return get_int("krylov", "block_size", 10); }

  UNetConfig network() const {
    UNetConfig n;
    n.levels = get_int("network", "levels", 3);
    n.base_channels = get_int("network", "base_channels", 16);
    n.resnet_per_level = get_int("network", "resnet_per_level", 1);
    n.bottleneck_resnets = get_int("network", "bottleneck_resnets", 3);
    return n;
  }
  bool encoder_solver() const {
    const std::string m = get("network", "mode", "standalone");
    if (m == "standalone") return false;
    if (m == "encoder_solver") return true;
    throw std::invalid_argument("network.mode must be standalone or encoder_solver");
  }

  TrainConfig training() const {
    TrainConfig t;
    t.epochs = get_int("training", "epochs", 40);
    t.lr0 = get_num("training", "lr0", 1e-4);
    t.batch0 = get_int("training", "batch0", 20);
    t.t0 = get_int("training", "t0", 48);
    t.val_fraction = get_num("training", "val_fraction", 0.1);
    t.encoder_solver = encoder_solver();
    t.seed = std::uint64_t(get_num("training", "seed", 1));
    return t;
  }

  DatasetSpec dataset_spec() const {
    DatasetSpec d;
    d.nx = grid_nx();
    d.ny = grid_ny();
    d.omega = omega();
    d.abl_width = abl_width();
    d.gamma_max = gamma_max();
    d.range = SlownessRange{get_num("slowness", "lo", 0.25), get_num("slowness", "hi", 1.0)};
    d.models = get_int("training", "models", 50);
    d.samples_per_model = get_int("training", "samples_per_model", 28);
    d.augment_per_model = get_int("training", "augment_per_model", 12);
    d.seed = std::uint64_t(get_num("training", "seed", 1));
    d.mg_levels = get_int("vcycle", "levels", 3);
    return d;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace helm
