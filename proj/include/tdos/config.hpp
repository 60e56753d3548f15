#pragma once

// Flat key=value run configuration with a fixed key registry. Every run is
// fully described by the canonical echo of its resolved config; the hash of
// that echo is embedded in artifacts so mismatched checkpoint/dataset/report
// combinations are detectable.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/io.hpp"

namespace tdos {

class RunConfig {
 public:
  RunConfig() {
    static const std::pair<const char*, const char*> kDefaults[] = {
        {"seed", "1"},
        {"paths.corpus", "data/corpus.tsv"},
        // synthetic data
        {"data.h", "32"},
        {"data.w", "32"},
        {"data.train_scenes", "200"},
        {"data.eval_scenes", "50"},
        {"data.paste_prob", "0.8"},
        {"data.ood_min_size", "4"},
        {"data.ood_max_size", "7"},
        // model
        {"model.patch", "4"},
        {"model.dim", "64"},
        {"model.text_dim", "32"},
        {"model.enc_blocks", "4"},
        {"model.dec_blocks", "2"},
        {"model.mlp_hidden", "128"},
        {"model.two_scale", "false"},
        // semantically augmented attention
        {"saa.enabled", "true"},
        {"saa.lambda", "0.5"},
        {"saa.sigma", "1.0"},
        {"saa.first_layer", "true"},
        {"saa.last_layer", "true"},
        // mining and prompts
        {"mine.id_labels", "background,road,vehicle,pedestrian"},
        {"mine.m", "50"},
        {"mine.n", "5"},
        {"mine.prompt_len", "4"},
        {"mine.quantile", "0.05"},
        // losses
        {"loss.w_seg", "1"},
        {"loss.w_v", "0.1"},
        {"loss.w_vl", "0.1"},
        {"loss.w_prompt", "0.1"},
        // training
        {"train.iterations", "2000"},
        {"train.batch", "4"},
        {"train.lr", "0.0001"},
        {"train.weight_decay", "0.05"},
        {"train.threads", "4"},
        {"train.checkpoint_every", "500"},
        // evaluation
        {"eval.aggregate", "max"},
        {"eval.grid", "100"},
    };
    for (const auto& [k, v] : kDefaults) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second = value;
  }

  // key=value overrides, one per line; '#' starts a comment.
  void load_stream(std::istream& is) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw FormatError("config line " + std::to_string(lineno) +
                          ": expected key=value, got '" + line + "'");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("config: cannot open " + path);
    load_stream(f);
  }

  // "key=value" as accepted by --set.
  void set_pair(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: override '" + kv +
                                  "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");
    return it->second;
  }

  int get_int(const std::string& key) const {
    return static_cast<int>(parse_ll(key));
  }

  std::uint64_t get_u64(const std::string& key) const {
    return static_cast<std::uint64_t>(parse_ll(key));
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != s.size())
      throw FormatError("config: " + key + "='" + s + "' is not a number");
    return v;
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw FormatError("config: " + key + "='" + s + "' is not a boolean");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // Canonical fully-resolved form: sorted key=value lines. This is what runs
  // echo into their output directory and what the config hash covers.
  std::string echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::uint64_t hash() const { return fnv1a(echo()); }

 private:
  static std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  long long parse_ll(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != s.size())
      throw FormatError("config: " + key + "='" + s + "' is not an integer");
    return v;
  }

  std::map<std::string, std::string> values_;  // ordered => canonical echo
};

}  // namespace tdos
