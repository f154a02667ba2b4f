#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vlbt/errors.hpp"
#include "vlbt/finetune.hpp"
#include "vlbt/model.hpp"
#include "vlbt/pretrain.hpp"
#include "vlbt/synth.hpp"

namespace vlbt {

// Flat `key = value` run configuration. Every field has a documented
// default; unknown keys are rejected by name; later assignments win with
// a warning; the effective config is echoed to the output directory.
struct Config {
    // model
    long long layers = 2;
    long long width = 64;
    long long heads = 4;
    long long ffn_mult = 4;
    std::string arch = "mome";  // mome | standard
    double drop_path_rate = 0.1;
    long long text_max_tokens = 16;
    long long image_side = 32;
    long long patch_size = 8;
    long long codebook_k = 32;
    long long codebook_iters = 25;
    long long codebook_images = 64;
    // masking
    double mlm_ratio = 0.15;
    double mlm_p_mask = 0.8;
    double mlm_p_random = 0.1;
    double mim_ratio = 0.4;
    double mvlm_text_ratio = 0.5;
    double mvlm_image_ratio = 0.4;
    bool mvlm_use_actions = true;
    long long block_min_area = 4;
    double block_min_aspect = 0.3;
    double block_max_area_frac = 0.5;
    // pretraining
    std::string tasks = "mlm,mim,mvlm";
    long long steps = 2000;
    long long halt_step = 0;  // stop early after this many steps (0 = run to `steps`)
    long long batch_texts = 8;
    long long batch_images = 8;
    long long batch_pairs = 8;
    double peak_lr = 2e-3;
    long long warmup_steps = 100;
    double weight_decay = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double mvlm_text_weight = 1.0;
    double mvlm_image_weight = 1.0;
    long long data_texts_n = 256;
    long long data_images_n = 256;
    long long data_pairs_n = 256;
    // finetuning / evaluation
    std::string init_checkpoint;
    std::string eval_checkpoint;
    long long ft_steps = 600;
    long long ft_batch = 16;
    double ft_peak_lr = 1e-3;
    long long ft_warmup = 60;
    double ft_weight_decay = 0.01;
    long long ft_train_n = 512;
    long long ft_eval_n = 256;
    long long retrieval_train_n = 219;  // one rendering per caption multiset
    long long retrieval_eval_n = 64;
    long long embed_dim = 32;
    long long rerank_k = 8;

    int grid_side() const { return static_cast<int>(image_side / patch_size); }
    int patches() const { return grid_side() * grid_side(); }

    MoMEConfig mome() const {
        MoMEConfig m;
        m.layers = static_cast<int>(layers);
        m.width = static_cast<int>(width);
        m.heads = static_cast<int>(heads);
        m.ffn_mult = static_cast<int>(ffn_mult);
        if (arch == "mome") {
            m.experts = ExpertSet::MoME;
        } else if (arch == "standard") {
            m.experts = ExpertSet::Standard;
        } else {
            throw config_error("arch must be 'mome' or 'standard', got '" + arch + "'");
        }
        m.drop_path_rate = drop_path_rate;
        m.max_text_positions = static_cast<int>(text_max_tokens) + 2;
        m.max_image_positions = patches() + 1;
        m.text_vocab = synthetic_vocab().size();
        m.visual_vocab = static_cast<int>(codebook_k);
        m.patch_dim = static_cast<int>(patch_size * patch_size * 3);
        m.validate();
        return m;
    }

    TrainConfig train(std::uint64_t seed) const {
        TrainConfig t;
        t.steps = steps;
        t.n_txt = static_cast<int>(batch_texts);
        t.n_img = static_cast<int>(batch_images);
        t.n_pair = static_cast<int>(batch_pairs);
        t.seed = seed;
        t.task_mlm = t.task_mim = t.task_mvlm = false;
        std::stringstream ss(tasks);
        std::string item;
        while (std::getline(ss, item, ',')) {
            std::string lower;
            for (char c : item)
                if (!std::isspace(static_cast<unsigned char>(c)))
                    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            if (lower.empty()) continue;
            if (lower == "mlm") {
                t.task_mlm = true;
            } else if (lower == "mim") {
                t.task_mim = true;
            } else if (lower == "mvlm") {
                t.task_mvlm = true;
            } else {
                throw config_error("unknown task '" + item + "' (expected mlm, mim, mvlm)");
            }
        }
        t.schedule = ScheduleConfig{peak_lr, warmup_steps, steps};
        t.adam = AdamConfig{adam_beta1, adam_beta2, adam_eps, weight_decay};
        t.mlm = MlmParams{mlm_ratio, mlm_p_mask, mlm_p_random, true};
        t.mvlm.text_ratio = mvlm_text_ratio;
        t.mvlm.image_ratio = mvlm_image_ratio;
        t.mvlm.text_use_actions = mvlm_use_actions;
        t.mvlm.block = block_params();
        t.mim_ratio = mim_ratio;
        t.block = block_params();
        t.mvlm_text_weight = mvlm_text_weight;
        t.mvlm_image_weight = mvlm_image_weight;
        t.validate();
        return t;
    }

    BlockMaskParams block_params() const {
        return BlockMaskParams{static_cast<int>(block_min_area), block_min_aspect,
                               block_max_area_frac};
    }

    PretrainDataConfig data(std::uint64_t /*seed*/) const {
        PretrainDataConfig d;
        d.n_texts = static_cast<int>(data_texts_n);
        d.n_images = static_cast<int>(data_images_n);
        d.n_pairs = static_cast<int>(data_pairs_n);
        d.image_side = static_cast<int>(image_side);
        d.patch_size = static_cast<int>(patch_size);
        return d;
    }

    FinetuneConfig finetune(std::uint64_t seed) const {
        FinetuneConfig f;
        f.steps = ft_steps;
        f.batch = static_cast<int>(ft_batch);
        f.seed = seed;
        f.schedule = ScheduleConfig{ft_peak_lr, ft_warmup, ft_steps};
        f.adam = AdamConfig{adam_beta1, adam_beta2, adam_eps, ft_weight_decay};
        f.vqa_answers = static_cast<int>(vqa_answers().size());
        f.imgcls_classes = kImgClsClasses;
        f.embed_dim = static_cast<int>(embed_dim);
        f.rerank_k = static_cast<int>(rerank_k);
        return f;
    }
};

namespace detail {

struct ConfigKey {
    std::string name;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline long long parse_int(const std::string& v) {
    std::size_t used = 0;
    long long out;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw config_error("expected an integer, got '" + v + "'");
    }
    if (used != v.size()) throw config_error("expected an integer, got '" + v + "'");
    return out;
}

inline double parse_double(const std::string& v) {
    std::size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw config_error("expected a number, got '" + v + "'");
    }
    if (used != v.size()) throw config_error("expected a number, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw config_error("expected a boolean, got '" + v + "'");
}

inline std::string fmt_double(double d) {
    std::ostringstream os;
    os << d;
    return os.str();
}

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        auto add_int = [&](const char* name, long long Config::*field) {
            k.push_back({name,
                         [field](Config& c, const std::string& v) { c.*field = parse_int(v); },
                         [field](const Config& c) { return std::to_string(c.*field); }});
        };
        auto add_double = [&](const char* name, double Config::*field) {
            k.push_back({name,
                         [field](Config& c, const std::string& v) { c.*field = parse_double(v); },
                         [field](const Config& c) { return fmt_double(c.*field); }});
        };
        auto add_bool = [&](const char* name, bool Config::*field) {
            k.push_back({name,
                         [field](Config& c, const std::string& v) { c.*field = parse_bool(v); },
                         [field](const Config& c) { return (c.*field) ? "true" : "false"; }});
        };
        auto add_string = [&](const char* name, std::string Config::*field) {
            k.push_back({name, [field](Config& c, const std::string& v) { c.*field = v; },
                         [field](const Config& c) { return c.*field; }});
        };
        add_int("layers", &Config::layers);
        add_int("width", &Config::width);
        add_int("heads", &Config::heads);
        add_int("ffn_mult", &Config::ffn_mult);
        add_string("arch", &Config::arch);
        add_double("drop_path_rate", &Config::drop_path_rate);
        add_int("text_max_tokens", &Config::text_max_tokens);
        add_int("image_side", &Config::image_side);
        add_int("patch_size", &Config::patch_size);
        add_int("codebook_k", &Config::codebook_k);
        add_int("codebook_iters", &Config::codebook_iters);
        add_int("codebook_images", &Config::codebook_images);
        add_double("mlm_ratio", &Config::mlm_ratio);
        add_double("mlm_p_mask", &Config::mlm_p_mask);
        add_double("mlm_p_random", &Config::mlm_p_random);
        add_double("mim_ratio", &Config::mim_ratio);
        add_double("mvlm_text_ratio", &Config::mvlm_text_ratio);
        add_double("mvlm_image_ratio", &Config::mvlm_image_ratio);
        add_bool("mvlm_use_actions", &Config::mvlm_use_actions);
        add_int("block_min_area", &Config::block_min_area);
        add_double("block_min_aspect", &Config::block_min_aspect);
        add_double("block_max_area_frac", &Config::block_max_area_frac);
        add_string("tasks", &Config::tasks);
        add_int("steps", &Config::steps);
        add_int("halt_step", &Config::halt_step);
        add_int("batch_texts", &Config::batch_texts);
        add_int("batch_images", &Config::batch_images);
        add_int("batch_pairs", &Config::batch_pairs);
        add_double("peak_lr", &Config::peak_lr);
        add_int("warmup_steps", &Config::warmup_steps);
        add_double("weight_decay", &Config::weight_decay);
        add_double("adam_beta1", &Config::adam_beta1);
        add_double("adam_beta2", &Config::adam_beta2);
        add_double("adam_eps", &Config::adam_eps);
        add_double("mvlm_text_weight", &Config::mvlm_text_weight);
        add_double("mvlm_image_weight", &Config::mvlm_image_weight);
        add_int("data_texts_n", &Config::data_texts_n);
        add_int("data_images_n", &Config::data_images_n);
        add_int("data_pairs_n", &Config::data_pairs_n);
        add_string("init_checkpoint", &Config::init_checkpoint);
        add_string("eval_checkpoint", &Config::eval_checkpoint);
        add_int("ft_steps", &Config::ft_steps);
        add_int("ft_batch", &Config::ft_batch);
        add_double("ft_peak_lr", &Config::ft_peak_lr);
        add_int("ft_warmup", &Config::ft_warmup);
        add_double("ft_weight_decay", &Config::ft_weight_decay);
        add_int("ft_train_n", &Config::ft_train_n);
        add_int("ft_eval_n", &Config::ft_eval_n);
        add_int("retrieval_train_n", &Config::retrieval_train_n);
        add_int("retrieval_eval_n", &Config::retrieval_eval_n);
        add_int("embed_dim", &Config::embed_dim);
        add_int("rerank_k", &Config::rerank_k);
        return k;
    }();
    return keys;
}

inline const ConfigKey& find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return k;
    throw config_error("unknown config key '" + name + "'");
}

}  // namespace detail

inline void apply_config_line(Config& cfg, const std::string& line, int line_no,
                              std::vector<std::string>& seen, std::ostream& warnings) {
    std::string body = line;
    const std::size_t hash = body.find('#');
    if (hash != std::string::npos) body = body.substr(0, hash);
    body = detail::trim(body);
    if (body.empty()) return;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
        throw config_error("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    const auto& entry = detail::find_key(key);
    for (const auto& s : seen)
        if (s == key) {
            warnings << "warning: duplicate config key '" << key << "', last occurrence wins\n";
            break;
        }
    try {
        entry.set(cfg, value);
    } catch (const config_error& e) {
        throw config_error("line " + std::to_string(line_no) + ", key '" + key +
                           "': " + e.what());
    }
    seen.push_back(key);
}

// Loads `key = value` lines, then applies overrides ("k=v" strings);
// later assignments win.
inline Config load_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::ostream& warnings = std::cerr) {
    Config cfg;
    std::vector<std::string> seen;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw config_error("cannot open config file: " + path);
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) apply_config_line(cfg, line, ++line_no, seen, warnings);
    }
    for (std::size_t i = 0; i < overrides.size(); ++i)
        apply_config_line(cfg, overrides[i], -static_cast<int>(i + 1), seen, warnings);
    return cfg;
}

// Every effective value, in canonical key order.
inline std::string echo_config(const Config& cfg) {
    std::string out;
    for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

}  // namespace vlbt
