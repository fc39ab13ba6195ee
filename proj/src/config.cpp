#include "foolhd/harness.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace foolhd {

namespace {

const std::set<std::string> kKnownKeys = {
    "schema_version", "dataset_dir", "output_dir", "checkpoint", "attack", "seed",
    "workers", "clip_limit", "train_if_needed", "train_epochs", "iterations", "lr",
    "weight_decay", "dropout", "epsilon", "bim_iterations", "target",
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::runtime_error("config: invalid unsigned integer for " + key + ": " + v);
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::runtime_error("config: invalid integer for " + key + ": " + v);
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw std::runtime_error("config: invalid number for " + key + ": " + v);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: invalid boolean for " + key + ": " + v);
}

}  // namespace

AttackConfig attack_config_for_kind(const std::string& kind) {
    if (kind == "foolhd") return AttackConfig::foolhd();
    if (kind == "foolhd-t") return AttackConfig::foolhd_targeted();
    if (kind == "foolhd-mse") return AttackConfig::foolhd_mse();
    if (kind == "foolhd-noskip") return AttackConfig::foolhd_noskip();
    if (kind == "fgsm" || kind == "bim") return AttackConfig::foolhd();  // epsilon fields apply
    throw std::runtime_error("unknown attack kind: " + kind);
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    std::map<std::string, std::string> keys;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " is not key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!kKnownKeys.count(key)) throw std::runtime_error("config: unknown key: " + key);
        if (keys.count(key)) throw std::runtime_error("config: duplicate key: " + key);
        keys[key] = value;
    }
    if (!keys.count("schema_version"))
        throw std::runtime_error("config: missing schema_version");
    if (parse_int("schema_version", keys.at("schema_version")) != kConfigSchemaVersion)
        throw std::runtime_error("config: unsupported schema_version (expected " +
                                 std::to_string(kConfigSchemaVersion) + ")");
    return keys;
}

ExperimentConfig config_from_keys(const std::map<std::string, std::string>& keys) {
    ExperimentConfig cfg;
    auto get = [&](const char* k) -> const std::string* {
        auto it = keys.find(k);
        return it == keys.end() ? nullptr : &it->second;
    };
    if (auto* v = get("attack")) cfg.attack_kind = *v;
    cfg.attack = attack_config_for_kind(cfg.attack_kind);
    if (auto* v = get("dataset_dir")) cfg.dataset_dir = *v;
    if (auto* v = get("output_dir")) cfg.output_dir = *v;
    if (auto* v = get("checkpoint")) cfg.checkpoint = *v;
    if (auto* v = get("seed")) cfg.seed = parse_u64("seed", *v);
    if (auto* v = get("workers")) cfg.workers = parse_int("workers", *v);
    if (auto* v = get("clip_limit")) cfg.clip_limit = parse_int("clip_limit", *v);
    if (auto* v = get("train_if_needed")) cfg.train_if_needed = parse_bool("train_if_needed", *v);
    if (auto* v = get("train_epochs")) cfg.train_epochs = parse_int("train_epochs", *v);
    if (auto* v = get("iterations")) cfg.attack.max_iterations = parse_int("iterations", *v);
    if (auto* v = get("lr")) cfg.attack.lr = parse_double("lr", *v);
    if (auto* v = get("weight_decay")) cfg.attack.weight_decay = parse_double("weight_decay", *v);
    if (auto* v = get("dropout")) cfg.attack.dropout = parse_double("dropout", *v);
    if (auto* v = get("epsilon")) cfg.attack.epsilon = parse_double("epsilon", *v);
    if (auto* v = get("bim_iterations")) cfg.attack.bim_iterations = parse_int("bim_iterations", *v);
    if (auto* v = get("target")) cfg.attack.target = parse_int("target", *v);
    return cfg;
}

void apply_seed_sources(ExperimentConfig& cfg, std::optional<uint64_t> cli_seed) {
    if (cli_seed) {
        cfg.seed = *cli_seed;
        return;
    }
    if (const char* env = std::getenv("FOOLHD_SEED")) {
        cfg.seed = parse_u64("FOOLHD_SEED", env);
    }
    // otherwise keep whatever the config file provided (possibly nothing)
}

void ExperimentConfig::validate() const {
    if (!seed) throw std::runtime_error("config: seed is mandatory (flag, FOOLHD_SEED, or file)");
    if (dataset_dir.empty()) throw std::runtime_error("config: dataset_dir is required");
    if (output_dir.empty()) throw std::runtime_error("config: output_dir is required");
    if (workers < 1) throw std::runtime_error("config: workers must be >= 1");
    if (clip_limit < 0) throw std::runtime_error("config: clip_limit must be >= 0");
    if (train_epochs < 1) throw std::runtime_error("config: train_epochs must be >= 1");
    attack_config_for_kind(attack_kind);  // throws on unknown kind
    attack.validate();
}

std::string ExperimentConfig::echo() const {
    std::ostringstream ss;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        return std::string(buf);
    };
    ss << "attack = " << attack_kind << "\n"
       << "bim_iterations = " << attack.bim_iterations << "\n"
       << "checkpoint = " << checkpoint << "\n"
       << "clip_limit = " << clip_limit << "\n"
       << "dataset_dir = " << dataset_dir << "\n"
       << "dropout = " << num(attack.dropout) << "\n"
       << "epsilon = " << num(attack.epsilon) << "\n"
       << "iterations = " << attack.max_iterations << "\n"
       << "lr = " << num(attack.lr) << "\n"
       << "output_dir = " << output_dir << "\n"
       << "schema_version = " << kConfigSchemaVersion << "\n"
       << "seed = " << (seed ? std::to_string(*seed) : std::string("<unset>")) << "\n";
    if (attack.target) ss << "target = " << *attack.target << "\n";
    ss << "train_epochs = " << train_epochs << "\n"
       << "train_if_needed = " << (train_if_needed ? "true" : "false") << "\n"
       << "weight_decay = " << num(attack.weight_decay) << "\n"
       << "workers = " << workers << "\n";
    return ss.str();
}

}  // namespace foolhd
