#include "tdv3/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace tdv3 {

void ReplayConfig::validate() const {
  if (capacity < 1) throw std::invalid_argument("config: replay.capacity must be positive");
  if (seg_len < 2) throw std::invalid_argument("config: replay.seg_len must be at least 2");
  if (horizon < 1) throw std::invalid_argument("config: replay.horizon must be positive");
  if (batch < 1) throw std::invalid_argument("config: replay.batch must be positive");
  if (starts_per_segment < 1) throw std::invalid_argument("config: replay.starts_per_segment must be positive");
  if (rollouts_per_start < 1) throw std::invalid_argument("config: replay.rollouts_per_start must be positive");
  if (!(priority_floor > 0)) throw std::invalid_argument("config: replay.priority_floor must be positive");
}

void ScheduleConfig::validate() const {
  if (total_env_steps < 0) throw std::invalid_argument("config: schedule.total_env_steps must be nonnegative");
  if (!(train_ratio >= 0)) throw std::invalid_argument("config: schedule.train_ratio must be nonnegative");
  if (eval_every < 1) throw std::invalid_argument("config: schedule.eval_every must be positive");
  if (eval_episodes < 1) throw std::invalid_argument("config: schedule.eval_episodes must be positive");
}

void RunConfig::finalize() {
  env.validate();
  world_model.d_obs = env.obs_dim();
  world_model.n_actions = env.n_actions();
  world_model.encoder.d_model = world_model.d_model;
  world_model.validate();
  if (!(world_model_lr > 0)) throw std::invalid_argument("config: world_model.lr must be positive");
  if (agent_freeze_scope != "world_model" && agent_freeze_scope != "transformer") {
    throw std::invalid_argument("config: agent.freeze_scope must be world_model or transformer");
  }
  agent_config().validate();
  replay.validate();
  schedule.validate();
}

AgentConfig RunConfig::agent_config() const {
  AgentConfig a;
  a.state_dim = world_model.state_dim();
  a.n_actions = env.n_actions();
  a.hidden = agent_hidden;
  a.gamma = agent_gamma;
  a.lambda = agent_lambda;
  a.entropy_scale = agent_entropy_scale;
  a.value_bins = agent_critic_bins;
  a.lr = agent_lr;
  a.freeze_prefix = agent_freeze_scope == "transformer" ? "wm.tssm" : "wm";
  return a;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string backbone_string(const WorldModelConfig& wm) {
  if (wm.backbone == Backbone::rssm) return "rssm";
  return wm.encoder.context == Context::full_causal ? "tssm_causal" : "tssm_window";
}

void set_backbone(WorldModelConfig& wm, const std::string& v) {
  if (v == "rssm") {
    wm.backbone = Backbone::rssm;
  } else if (v == "tssm_causal") {
    wm.backbone = Backbone::tssm;
    wm.encoder.context = Context::full_causal;
  } else if (v == "tssm_window") {
    wm.backbone = Backbone::tssm;
    wm.encoder.context = Context::window;
  } else {
    throw std::invalid_argument("config: world_model.backbone must be rssm, tssm_causal or tssm_window");
  }
}

long long to_ll(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' has non-integer value '" + v + "'");
  }
  if (used != v.size()) throw std::invalid_argument("config: key '" + key + "' has non-integer value '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_ll(key, v)); }

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "0") return false;
  if (v == "1") return true;
  throw std::invalid_argument("config: key '" + key + "' must be 0 or 1");
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' has non-numeric value '" + v + "'");
  }
  if (used != v.size()) throw std::invalid_argument("config: key '" + key + "' has non-numeric value '" + v + "'");
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "env.kind=" << (env.kind == EnvConfig::Kind::delayed_recall ? "delayed_recall" : "repeat_sequence") << "\n";
  out << "env.delay=" << env.delay << "\n";
  out << "env.n_symbols=" << env.n_symbols << "\n";
  out << "env.episode_len=" << env.episode_len << "\n";
  out << "world_model.backbone=" << backbone_string(world_model) << "\n";
  out << "world_model.window=" << world_model.encoder.window << "\n";
  out << "world_model.latent_groups=" << world_model.latent_groups << "\n";
  out << "world_model.latent_classes=" << world_model.latent_classes << "\n";
  out << "world_model.d_model=" << world_model.d_model << "\n";
  out << "world_model.d_embed=" << world_model.d_embed << "\n";
  out << "world_model.n_heads=" << world_model.encoder.n_heads << "\n";
  out << "world_model.d_ff=" << world_model.encoder.d_ff << "\n";
  out << "world_model.n_layers=" << world_model.encoder.n_layers << "\n";
  out << "world_model.positional_encoding=" << (world_model.encoder.positional_encoding ? 1 : 0) << "\n";
  out << "world_model.unimix=" << fmt_double(world_model.unimix) << "\n";
  out << "world_model.free_bits=" << fmt_double(world_model.free_bits) << "\n";
  out << "world_model.kl_dyn=" << fmt_double(world_model.kl_dyn_scale) << "\n";
  out << "world_model.kl_rep=" << fmt_double(world_model.kl_rep_scale) << "\n";
  out << "world_model.reward_bins=" << world_model.reward_bins << "\n";
  out << "world_model.lr=" << fmt_double(world_model_lr) << "\n";
  out << "agent.gamma=" << fmt_double(agent_gamma) << "\n";
  out << "agent.lambda=" << fmt_double(agent_lambda) << "\n";
  out << "agent.entropy_scale=" << fmt_double(agent_entropy_scale) << "\n";
  out << "agent.critic_bins=" << agent_critic_bins << "\n";
  out << "agent.hidden=" << agent_hidden << "\n";
  out << "agent.lr=" << fmt_double(agent_lr) << "\n";
  out << "agent.freeze_scope=" << agent_freeze_scope << "\n";
  out << "replay.capacity=" << replay.capacity << "\n";
  out << "replay.seg_len=" << replay.seg_len << "\n";
  out << "replay.horizon=" << replay.horizon << "\n";
  out << "replay.batch=" << replay.batch << "\n";
  out << "replay.starts_per_segment=" << replay.starts_per_segment << "\n";
  out << "replay.rollouts_per_start=" << replay.rollouts_per_start << "\n";
  out << "replay.priority_floor=" << fmt_double(replay.priority_floor) << "\n";
  out << "schedule.total_env_steps=" << schedule.total_env_steps << "\n";
  out << "schedule.train_ratio=" << fmt_double(schedule.train_ratio) << "\n";
  out << "schedule.eval_every=" << schedule.eval_every << "\n";
  out << "schedule.eval_episodes=" << schedule.eval_episodes << "\n";
  out << "schedule.seed=" << schedule.seed << "\n";
  return out.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, bool> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) + " is not key=value: '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (seen[key]) throw std::invalid_argument("config: duplicate key '" + key + "'");
    seen[key] = true;

    if (key == "env.kind") {
      if (val == "delayed_recall") {
        cfg.env.kind = EnvConfig::Kind::delayed_recall;
      } else if (val == "repeat_sequence") {
        cfg.env.kind = EnvConfig::Kind::repeat_sequence;
      } else {
        throw std::invalid_argument("config: env.kind must be delayed_recall or repeat_sequence");
      }
    } else if (key == "env.delay") {
      cfg.env.delay = to_int(key, val);
    } else if (key == "env.n_symbols") {
      cfg.env.n_symbols = to_int(key, val);
    } else if (key == "env.episode_len") {
      cfg.env.episode_len = to_int(key, val);
    } else if (key == "world_model.backbone") {
      set_backbone(cfg.world_model, val);
    } else if (key == "world_model.window") {
      cfg.world_model.encoder.window = to_int(key, val);
    } else if (key == "world_model.latent_groups") {
      cfg.world_model.latent_groups = to_int(key, val);
    } else if (key == "world_model.latent_classes") {
      cfg.world_model.latent_classes = to_int(key, val);
    } else if (key == "world_model.d_model") {
      cfg.world_model.d_model = to_int(key, val);
    } else if (key == "world_model.d_embed") {
      cfg.world_model.d_embed = to_int(key, val);
    } else if (key == "world_model.n_heads") {
      cfg.world_model.encoder.n_heads = to_int(key, val);
    } else if (key == "world_model.d_ff") {
      cfg.world_model.encoder.d_ff = to_int(key, val);
    } else if (key == "world_model.n_layers") {
      cfg.world_model.encoder.n_layers = to_int(key, val);
    } else if (key == "world_model.positional_encoding") {
      cfg.world_model.encoder.positional_encoding = to_bool(key, val);
    } else if (key == "world_model.unimix") {
      cfg.world_model.unimix = to_double(key, val);
    } else if (key == "world_model.free_bits") {
      cfg.world_model.free_bits = to_double(key, val);
    } else if (key == "world_model.kl_dyn") {
      cfg.world_model.kl_dyn_scale = to_double(key, val);
    } else if (key == "world_model.kl_rep") {
      cfg.world_model.kl_rep_scale = to_double(key, val);
    } else if (key == "world_model.reward_bins") {
      cfg.world_model.reward_bins = to_int(key, val);
    } else if (key == "world_model.lr") {
      cfg.world_model_lr = to_double(key, val);
    } else if (key == "agent.gamma") {
      cfg.agent_gamma = to_double(key, val);
    } else if (key == "agent.lambda") {
      cfg.agent_lambda = to_double(key, val);
    } else if (key == "agent.entropy_scale") {
      cfg.agent_entropy_scale = to_double(key, val);
    } else if (key == "agent.critic_bins") {
      cfg.agent_critic_bins = to_int(key, val);
    } else if (key == "agent.hidden") {
      cfg.agent_hidden = to_int(key, val);
    } else if (key == "agent.lr") {
      cfg.agent_lr = to_double(key, val);
    } else if (key == "agent.freeze_scope") {
      cfg.agent_freeze_scope = val;
    } else if (key == "replay.capacity") {
      cfg.replay.capacity = to_int(key, val);
    } else if (key == "replay.seg_len") {
      cfg.replay.seg_len = to_int(key, val);
    } else if (key == "replay.horizon") {
      cfg.replay.horizon = to_int(key, val);
    } else if (key == "replay.batch") {
      cfg.replay.batch = to_int(key, val);
    } else if (key == "replay.starts_per_segment") {
      cfg.replay.starts_per_segment = to_int(key, val);
    } else if (key == "replay.rollouts_per_start") {
      cfg.replay.rollouts_per_start = to_int(key, val);
    } else if (key == "replay.priority_floor") {
      cfg.replay.priority_floor = to_double(key, val);
    } else if (key == "schedule.total_env_steps") {
      cfg.schedule.total_env_steps = to_ll(key, val);
    } else if (key == "schedule.train_ratio") {
      cfg.schedule.train_ratio = to_double(key, val);
    } else if (key == "schedule.eval_every") {
      cfg.schedule.eval_every = to_int(key, val);
    } else if (key == "schedule.eval_episodes") {
      cfg.schedule.eval_episodes = to_int(key, val);
    } else if (key == "schedule.seed") {
      cfg.schedule.seed = static_cast<std::uint64_t>(to_ll(key, val));
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  cfg.finalize();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write '" + path + "'");
  out << serialize();
  if (!out) throw std::runtime_error("config: write failed for '" + path + "'");
}

}  // namespace tdv3
