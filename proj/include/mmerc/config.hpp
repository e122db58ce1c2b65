#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmerc/common.hpp"

namespace mmerc {

// One flat bag of run settings, mirrored one-to-one by the config file keys
// and by `--set key=value` on the command line.
struct RunConfig {
  std::uint64_t seed = 42;
  double learning_rate = 3e-4;
  std::size_t batch_dialogues = 10;
  std::size_t epochs = 100;
  double dropout = 0.5;
  std::size_t past = 11;
  std::size_t future = 9;
  std::size_t heads_gt = 7;
  std::size_t heads_pcm = 2;
  double eta = 1.0;
  std::size_t pcm_depth = 2;
  std::size_t d_h = 200;
  std::size_t d_h1 = 200;
  std::size_t d_h2 = 200;
  std::size_t d_alpha = 64;
  std::size_t d_hidden = 0;  // 0 picks half the fused width
  std::size_t text_heads = 4;
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double test_ratio = 0.1;
  bool no_rtgcn = false;
  bool no_pcm = false;
  bool no_rmulti = false;
  bool no_rtemp = false;
  std::string modalities = "avl";
  bool strict_window = false;
  // Stop once eval-mode train accuracy reaches this value; 0 disables.
  double early_stop_train_acc = 0.0;

  // 'l' and 't' both name the text channel.
  std::array<bool, 3> enabled_modalities() const {
    std::array<bool, 3> on{false, false, false};
    for (char c : modalities) {
      std::size_t m;
      switch (c) {
        case 'a': m = 0; break;
        case 'v': m = 1; break;
        case 'l':
        case 't': m = 2; break;
        default:
          fail(detail::msg("config: unknown modality '", c, "' in \"",
                           modalities, "\""));
      }
      require(!on[m], detail::msg("config: modality '", c,
                                  "' listed twice in \"", modalities, "\""));
      on[m] = true;
    }
    return on;
  }

  void validate() const {
    require(learning_rate > 0.0, "config: learning_rate must be positive");
    require(batch_dialogues >= 1, "config: batch_dialogues must be >= 1");
    require(dropout >= 0.0 && dropout < 1.0,
            detail::msg("config: dropout ", dropout, " outside [0, 1)"));
    require(eta >= 0.0 && eta <= 1.0,
            detail::msg("config: eta ", eta, " outside [0, 1]"));
    require(heads_gt >= 1 && heads_pcm >= 1 && text_heads >= 1,
            "config: head counts must be >= 1");
    require(d_h > 0 && d_h1 > 0 && d_h2 > 0 && d_alpha > 0,
            "config: hidden widths must be positive");
    require(train_ratio >= 0 && valid_ratio >= 0 && test_ratio >= 0,
            "config: split ratios must be nonnegative");
    require(std::abs(train_ratio + valid_ratio + test_ratio - 1.0) <= 1e-9,
            detail::msg("config: split ratios sum to ",
                        train_ratio + valid_ratio + test_ratio,
                        ", expected 1"));
    require(early_stop_train_acc >= 0.0 && early_stop_train_acc <= 1.0,
            "config: early_stop_train_acc outside [0, 1]");
    auto on = enabled_modalities();
    require(on[0] || on[1] || on[2],
            "config: at least one modality must be enabled");
  }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(msg(where, ": expected true or false, got '", v, "'"));
}

inline double parse_double(const std::string& v, const std::string& where) {
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    fail(msg(where, ": expected a number, got '", v, "'"));
  }
  require(pos == v.size(), msg(where, ": trailing junk in number '", v, "'"));
  return out;
}

inline std::uint64_t parse_unsigned(const std::string& v,
                                    const std::string& where) {
  require(!v.empty() && v.find('-') == std::string::npos,
          msg(where, ": expected a nonnegative integer, got '", v, "'"));
  std::size_t pos = 0;
  std::uint64_t out;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    fail(msg(where, ": expected a nonnegative integer, got '", v, "'"));
  }
  require(pos == v.size(), msg(where, ": trailing junk in integer '", v, "'"));
  return out;
}

inline std::string parse_string(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
    return v.substr(1, v.size() - 2);
  return v;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Sets one field by its config-file key; `where` prefixes error messages.
inline void apply_config_value(RunConfig& cfg, const std::string& key,
                               const std::string& value,
                               const std::string& where) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_unsigned;
  const std::string v = detail::parse_string(detail::trim(value));
  if (key == "seed") cfg.seed = parse_unsigned(v, where);
  else if (key == "learning_rate") cfg.learning_rate = parse_double(v, where);
  else if (key == "batch_dialogues")
    cfg.batch_dialogues = parse_unsigned(v, where);
  else if (key == "epochs") cfg.epochs = parse_unsigned(v, where);
  else if (key == "dropout") cfg.dropout = parse_double(v, where);
  else if (key == "past") cfg.past = parse_unsigned(v, where);
  else if (key == "future") cfg.future = parse_unsigned(v, where);
  else if (key == "heads_gt") cfg.heads_gt = parse_unsigned(v, where);
  else if (key == "heads_pcm") cfg.heads_pcm = parse_unsigned(v, where);
  else if (key == "eta") cfg.eta = parse_double(v, where);
  else if (key == "pcm_depth") cfg.pcm_depth = parse_unsigned(v, where);
  else if (key == "d_h") cfg.d_h = parse_unsigned(v, where);
  else if (key == "d_h1") cfg.d_h1 = parse_unsigned(v, where);
  else if (key == "d_h2") cfg.d_h2 = parse_unsigned(v, where);
  else if (key == "d_alpha") cfg.d_alpha = parse_unsigned(v, where);
  else if (key == "d_hidden") cfg.d_hidden = parse_unsigned(v, where);
  else if (key == "text_heads") cfg.text_heads = parse_unsigned(v, where);
  else if (key == "train_ratio") cfg.train_ratio = parse_double(v, where);
  else if (key == "valid_ratio") cfg.valid_ratio = parse_double(v, where);
  else if (key == "test_ratio") cfg.test_ratio = parse_double(v, where);
  else if (key == "no_rtgcn") cfg.no_rtgcn = parse_bool(v, where);
  else if (key == "no_pcm") cfg.no_pcm = parse_bool(v, where);
  else if (key == "no_rmulti") cfg.no_rmulti = parse_bool(v, where);
  else if (key == "no_rtemp") cfg.no_rtemp = parse_bool(v, where);
  else if (key == "modalities") cfg.modalities = v;
  else if (key == "strict_window") cfg.strict_window = parse_bool(v, where);
  else if (key == "early_stop_train_acc")
    cfg.early_stop_train_acc = parse_double(v, where);
  else
    fail(detail::msg(where, ": unknown config key '", key, "'"));
}

// `key = value` per line, `#` starts a comment, blank lines skipped.
inline RunConfig parse_config_stream(std::istream& in,
                                     const std::string& name,
                                     RunConfig cfg = RunConfig{}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = detail::msg(name, ":", line_no);
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            detail::msg(where, ": expected 'key = value', got '", line, "'"));
    const std::string key = detail::trim(line.substr(0, eq));
    require(!key.empty(), detail::msg(where, ": empty key"));
    apply_config_value(cfg, key, line.substr(eq + 1), where);
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path,
                             RunConfig cfg = RunConfig{}) {
  std::ifstream in(path);
  require(in.good(), detail::msg("cannot open config '", path, "'"));
  return parse_config_stream(in, path, std::move(cfg));
}

// `key=value` tokens layered on top of whatever the file set.
inline void apply_overrides(RunConfig& cfg,
                            const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos,
            detail::msg("override '", o, "': expected key=value"));
    apply_config_value(cfg, detail::trim(o.substr(0, eq)), o.substr(eq + 1),
                       detail::msg("override '", o, "'"));
  }
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return nlohmann::json{{"seed", c.seed},
                        {"learning_rate", c.learning_rate},
                        {"batch_dialogues", c.batch_dialogues},
                        {"epochs", c.epochs},
                        {"dropout", c.dropout},
                        {"past", c.past},
                        {"future", c.future},
                        {"heads_gt", c.heads_gt},
                        {"heads_pcm", c.heads_pcm},
                        {"eta", c.eta},
                        {"pcm_depth", c.pcm_depth},
                        {"d_h", c.d_h},
                        {"d_h1", c.d_h1},
                        {"d_h2", c.d_h2},
                        {"d_alpha", c.d_alpha},
                        {"d_hidden", c.d_hidden},
                        {"text_heads", c.text_heads},
                        {"train_ratio", c.train_ratio},
                        {"valid_ratio", c.valid_ratio},
                        {"test_ratio", c.test_ratio},
                        {"no_rtgcn", c.no_rtgcn},
                        {"no_pcm", c.no_pcm},
                        {"no_rmulti", c.no_rmulti},
                        {"no_rtemp", c.no_rtemp},
                        {"modalities", c.modalities},
                        {"strict_window", c.strict_window},
                        {"early_stop_train_acc", c.early_stop_train_acc}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_dialogues = j.at("batch_dialogues").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.past = j.at("past").get<std::size_t>();
  c.future = j.at("future").get<std::size_t>();
  c.heads_gt = j.at("heads_gt").get<std::size_t>();
  c.heads_pcm = j.at("heads_pcm").get<std::size_t>();
  c.eta = j.at("eta").get<double>();
  c.pcm_depth = j.at("pcm_depth").get<std::size_t>();
  c.d_h = j.at("d_h").get<std::size_t>();
  c.d_h1 = j.at("d_h1").get<std::size_t>();
  c.d_h2 = j.at("d_h2").get<std::size_t>();
  c.d_alpha = j.at("d_alpha").get<std::size_t>();
  c.d_hidden = j.at("d_hidden").get<std::size_t>();
  c.text_heads = j.at("text_heads").get<std::size_t>();
  c.train_ratio = j.at("train_ratio").get<double>();
  c.valid_ratio = j.at("valid_ratio").get<double>();
  c.test_ratio = j.at("test_ratio").get<double>();
  c.no_rtgcn = j.at("no_rtgcn").get<bool>();
  c.no_pcm = j.at("no_pcm").get<bool>();
  c.no_rmulti = j.at("no_rmulti").get<bool>();
  c.no_rtemp = j.at("no_rtemp").get<bool>();
  c.modalities = j.at("modalities").get<std::string>();
  c.strict_window = j.at("strict_window").get<bool>();
  c.early_stop_train_acc = j.at("early_stop_train_acc").get<double>();
  return c;
}

}  // namespace mmerc
