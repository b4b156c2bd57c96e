#include "fewseg/runconfig.hpp"

#include "fewseg/common.hpp"

#include <fstream>
#include <sstream>

namespace fewseg {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: invalid integer for " + key + ": " + v);
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: invalid number for " + key + ": " + v);
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const auto out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: invalid seed for " + key + ": " + v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config: invalid boolean for " + key + ": " + v);
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ','))
        if (!trim(item).empty()) out.push_back(to_int(key, trim(item)));
    return out;
}

} // namespace

void RunConfig::validate() const {
    encoder.validate();
    trainer.validate();
    const int d_tilde = effective_bottleneck();
    if (d_tilde <= 0 || d_tilde >= encoder.embed_dim)
        throw ConfigError("config: bottleneck_dim must satisfy 0 < d~ < embed_dim");
    if (data.image_size <= 0 || data.image_size % 4 != 0)
        throw ConfigError("config: data.image_size must be a positive multiple of 4");
    if (data.episodes_per_class <= 0 || data.samples_per_episode <= 0)
        throw ConfigError("config: data counts must be positive");
    if (eval.shots <= 0 || eval.episodes_per_class <= 0)
        throw ConfigError("config: eval counts must be positive");
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            if (section != "encoder" && section != "adapters" && section != "trainer" &&
                section != "data" && section != "eval")
                throw ConfigError("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: malformed line " + std::to_string(lineno));
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        const std::string qual = section + "." + key;

        if (section == "encoder") {
            if (key == "image_size") rc.encoder.image_size = to_int(qual, val);
            else if (key == "patch_size") rc.encoder.patch_size = to_int(qual, val);
            else if (key == "embed_dim") rc.encoder.embed_dim = to_int(qual, val);
            else if (key == "num_blocks") rc.encoder.num_blocks = to_int(qual, val);
            else if (key == "num_heads") rc.encoder.num_heads = to_int(qual, val);
            else if (key == "mlp_ratio") rc.encoder.mlp_ratio = to_int(qual, val);
            else if (key == "adapted_layers") rc.encoder.adapted_layers = to_int_list(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "adapters") {
            if (key == "kind") rc.adapter_kind = adapter_kind_from_name(val);
            else if (key == "bottleneck_dim") rc.bottleneck_dim = to_int(qual, val);
            else if (key == "model_seed") rc.model_seed = to_u64(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "trainer") {
            if (key == "learning_rate") rc.trainer.learning_rate = to_double(qual, val);
            else if (key == "epochs") rc.trainer.epochs = to_int(qual, val);
            else if (key == "lambda_bce") rc.trainer.lambda_bce = to_double(qual, val);
            else if (key == "lambda_dice") rc.trainer.lambda_dice = to_double(qual, val);
            else if (key == "targets_per_clip") rc.trainer.targets_per_clip = to_int(qual, val);
            else if (key == "prompt_aux_weight") rc.trainer.prompt_aux_weight = to_double(qual, val);
            else if (key == "weight_decay") rc.trainer.weight_decay = to_double(qual, val);
            else if (key == "seed") rc.trainer.seed = to_u64(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "data") {
            if (key == "root") rc.data.root = val;
            else if (key == "image_size") rc.data.image_size = to_int(qual, val);
            else if (key == "episodes_per_class") rc.data.episodes_per_class = to_int(qual, val);
            else if (key == "samples_per_episode") rc.data.samples_per_episode = to_int(qual, val);
            else if (key == "distractors") rc.data.distractors = to_bool(qual, val);
            else if (key == "seed") rc.data.seed = to_u64(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "eval") {
            if (key == "shots") rc.eval.shots = to_int(qual, val);
            else if (key == "episodes_per_class") rc.eval.episodes_per_class = to_int(qual, val);
            else if (key == "prompt") rc.eval.prompt = prompt_kind_from_name(val);
            else if (key == "seed") rc.eval.seed = to_u64(qual, val);
            else throw ConfigError("config: unknown key " + qual);
        } else {
            throw ConfigError("config: key outside any section at line " +
                              std::to_string(lineno));
        }
    }
    rc.validate();
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) {
        RunConfig rc;
        rc.validate();
        return rc;
    }
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_run_config(buf.str());
}

} // namespace fewseg
