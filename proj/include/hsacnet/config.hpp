#pragma once
// Run configuration: one JSON file drives every command. Ablation switches
// (encoder variant, change module on/off, adapters, init policy) resolve
// into the concrete network/train/augment configs, and every run writes the
// fully resolved copy next to its outputs.

#include <json.hpp>

#include <fstream>

#include "hsacnet/augment.hpp"
#include "hsacnet/network.hpp"
#include "hsacnet/pipeline.hpp"
#include "hsacnet/trainer.hpp"

namespace hsacnet {

struct DataConfig {
    std::string root;
    std::string manifest = "manifest.json";
    std::string train_split = "train";
    std::string val_split = "val";
    std::string test_split = "test";
    double labeled_ratio = 0.05;
    uint64_t partition_seed = 0;
};

struct AblationConfig {
    std::string encoder_variant = "tiny";  // paper | tiny | conv-baseline
    bool sadam = true;
    bool adapters = true;
    std::string init = "random";  // pretrained | random | frozen
    std::string pretrained_checkpoint;
};

struct RunConfig {
    AblationConfig ablation;
    ChangeNetConfig network = ChangeNetConfig::tiny();
    bool network_overridden = false;  // set when the file carries a network section
    TrainConfig train;
    AugmentSpec augment;
    DataConfig data;
    std::string out = "runs/run";

    // Applies the ablation switches on top of the selected preset.
    ChangeNetConfig resolve_network() const {
        ChangeNetConfig cfg = network;
        if (!network_overridden) {
            if (ablation.encoder_variant == "paper") {
                cfg = ChangeNetConfig::paper();
            } else if (ablation.encoder_variant == "tiny") {
                cfg = ChangeNetConfig::tiny();
            } else if (ablation.encoder_variant == "conv-baseline") {
                cfg = ChangeNetConfig::tiny();
                cfg.encoder_variant = "conv";
                cfg.encoder.blocks = {2, 2, 4, 2};
            } else {
                throw std::invalid_argument("run config: unknown encoder_variant '" + ablation.encoder_variant + "'");
            }
        }
        cfg.sadam_enabled = ablation.sadam;
        cfg.encoder.adapter_enabled = ablation.adapters;
        if (ablation.init == "pretrained") {
            cfg.encoder.init_mode = "pretrained-import";
            cfg.encoder.freeze_backbone = true;
        } else if (ablation.init == "random") {
            cfg.encoder.init_mode = "random";
            cfg.encoder.freeze_backbone = false;
        } else if (ablation.init == "frozen") {
            cfg.encoder.init_mode = "pretrained-import";
            cfg.encoder.freeze_backbone = true;
            cfg.encoder.adapter_enabled = false;  // kept frozen without adapter tuning
        } else {
            throw std::invalid_argument("run config: unknown init '" + ablation.init + "'");
        }
        cfg.validate();
        return cfg;
    }
};

namespace cfg_json {

inline json dump_encoder(const EncoderConfig& e) {
    return json{{"channels", e.channels},       {"blocks", e.blocks},
                {"strides", e.strides},         {"adapter_enabled", e.adapter_enabled},
                {"adapter_reduction", e.adapter_reduction}, {"freeze_backbone", e.freeze_backbone},
                {"init_mode", e.init_mode},     {"attn_dims", e.attn_dims},
                {"mlp_dims", e.mlp_dims},       {"head_dim", e.head_dim},
                {"window", e.window}};
}

inline void parse_encoder(const json& j, EncoderConfig& e) {
    e.channels = j.value("channels", e.channels);
    e.blocks = j.value("blocks", e.blocks);
    e.strides = j.value("strides", e.strides);
    e.adapter_enabled = j.value("adapter_enabled", e.adapter_enabled);
    e.adapter_reduction = j.value("adapter_reduction", e.adapter_reduction);
    e.freeze_backbone = j.value("freeze_backbone", e.freeze_backbone);
    e.init_mode = j.value("init_mode", e.init_mode);
    e.attn_dims = j.value("attn_dims", e.attn_dims);
    e.mlp_dims = j.value("mlp_dims", e.mlp_dims);
    e.head_dim = j.value("head_dim", e.head_dim);
    e.window = j.value("window", e.window);
}

inline json dump_network(const ChangeNetConfig& n) {
    return json{{"encoder", dump_encoder(n.encoder)},
                {"encoder_variant", n.encoder_variant},
                {"sadam_enabled", n.sadam_enabled},
                {"neck_channels", n.neck_channels},
                {"sadam_gamma_init", n.sadam_gamma_init},
                {"sca_softmax_axis", n.sca_softmax_axis},
                {"num_classes", n.num_classes}};
}

inline void parse_network(const json& j, ChangeNetConfig& n) {
    if (j.contains("encoder")) parse_encoder(j.at("encoder"), n.encoder);
    n.encoder_variant = j.value("encoder_variant", n.encoder_variant);
    n.sadam_enabled = j.value("sadam_enabled", n.sadam_enabled);
    n.neck_channels = j.value("neck_channels", n.neck_channels);
    n.sadam_gamma_init = j.value("sadam_gamma_init", n.sadam_gamma_init);
    n.sca_softmax_axis = j.value("sca_softmax_axis", n.sca_softmax_axis);
    n.num_classes = j.value("num_classes", n.num_classes);
}

inline json dump_train(const TrainConfig& t) {
    return json{{"tau", t.tau},
                {"lambda1", t.lambda1},
                {"lambda2", t.lambda2},
                {"lr_init", t.lr_init},
                {"lr_final", t.lr_final},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"weight_decay", t.weight_decay},
                {"momentum_beta", t.momentum_beta},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"low_conf_mode", t.low_conf_mode},
                {"seed", t.seed},
                {"val_interval", t.val_interval},
                {"sup_only", t.sup_only}};
}

inline void parse_train(const json& j, TrainConfig& t) {
    t.tau = j.value("tau", t.tau);
    t.lambda1 = j.value("lambda1", t.lambda1);
    t.lambda2 = j.value("lambda2", t.lambda2);
    t.lr_init = j.value("lr_init", t.lr_init);
    t.lr_final = j.value("lr_final", t.lr_final);
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.momentum_beta = j.value("momentum_beta", t.momentum_beta);
    t.adam_beta2 = j.value("adam_beta2", t.adam_beta2);
    t.adam_eps = j.value("adam_eps", t.adam_eps);
    t.low_conf_mode = j.value("low_conf_mode", t.low_conf_mode);
    t.seed = j.value("seed", t.seed);
    t.val_interval = j.value("val_interval", t.val_interval);
    t.sup_only = j.value("sup_only", t.sup_only);
}

inline json dump_augment(const AugmentSpec& a) {
    return json{{"resize_min", a.resize_min},
                {"resize_max", a.resize_max},
                {"hflip_prob", a.hflip_prob},
                {"jitter_prob", a.jitter_prob},
                {"brightness", a.brightness},
                {"contrast", a.contrast},
                {"saturation", a.saturation},
                {"hue", a.hue},
                {"blur_prob", a.blur_prob},
                {"blur_sigma_min", a.blur_sigma_min},
                {"blur_sigma_max", a.blur_sigma_max},
                {"cutmix_prob", a.cutmix_prob},
                {"cutmix_area_min", a.cutmix_area_min},
                {"cutmix_area_max", a.cutmix_area_max},
                {"identical_photometric", a.identical_photometric}};
}

inline void parse_augment(const json& j, AugmentSpec& a) {
    a.resize_min = j.value("resize_min", a.resize_min);
    a.resize_max = j.value("resize_max", a.resize_max);
    a.hflip_prob = j.value("hflip_prob", a.hflip_prob);
    a.jitter_prob = j.value("jitter_prob", a.jitter_prob);
    a.brightness = j.value("brightness", a.brightness);
    a.contrast = j.value("contrast", a.contrast);
    a.saturation = j.value("saturation", a.saturation);
    a.hue = j.value("hue", a.hue);
    a.blur_prob = j.value("blur_prob", a.blur_prob);
    a.blur_sigma_min = j.value("blur_sigma_min", a.blur_sigma_min);
    a.blur_sigma_max = j.value("blur_sigma_max", a.blur_sigma_max);
    a.cutmix_prob = j.value("cutmix_prob", a.cutmix_prob);
    a.cutmix_area_min = j.value("cutmix_area_min", a.cutmix_area_min);
    a.cutmix_area_max = j.value("cutmix_area_max", a.cutmix_area_max);
    a.identical_photometric = j.value("identical_photometric", a.identical_photometric);
}

inline json dump_data(const DataConfig& d) {
    return json{{"root", d.root},           {"manifest", d.manifest},
                {"train_split", d.train_split}, {"val_split", d.val_split},
                {"test_split", d.test_split},   {"labeled_ratio", d.labeled_ratio},
                {"partition_seed", d.partition_seed}};
}

inline void parse_data(const json& j, DataConfig& d) {
    d.root = j.value("root", d.root);
    d.manifest = j.value("manifest", d.manifest);
    d.train_split = j.value("train_split", d.train_split);
    d.val_split = j.value("val_split", d.val_split);
    d.test_split = j.value("test_split", d.test_split);
    d.labeled_ratio = j.value("labeled_ratio", d.labeled_ratio);
    d.partition_seed = j.value("partition_seed", d.partition_seed);
}

inline json dump_ablation(const AblationConfig& a) {
    return json{{"encoder_variant", a.encoder_variant},
                {"sadam", a.sadam},
                {"adapters", a.adapters},
                {"init", a.init},
                {"pretrained_checkpoint", a.pretrained_checkpoint}};
}

inline void parse_ablation(const json& j, AblationConfig& a) {
    a.encoder_variant = j.value("encoder_variant", a.encoder_variant);
    a.sadam = j.value("sadam", a.sadam);
    a.adapters = j.value("adapters", a.adapters);
    a.init = j.value("init", a.init);
    a.pretrained_checkpoint = j.value("pretrained_checkpoint", a.pretrained_checkpoint);
}

}  // namespace cfg_json

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    RunConfig c;
    try {
        if (j.contains("ablation")) cfg_json::parse_ablation(j.at("ablation"), c.ablation);
        if (j.contains("network")) {
            // start from the ablation preset, then apply explicit fields
            c.network_overridden = true;
            RunConfig preset_only;
            preset_only.ablation = c.ablation;
            c.network = preset_only.resolve_network();
            cfg_json::parse_network(j.at("network"), c.network);
        }
        if (j.contains("train")) cfg_json::parse_train(j.at("train"), c.train);
        if (j.contains("augment")) cfg_json::parse_augment(j.at("augment"), c.augment);
        if (j.contains("data")) cfg_json::parse_data(j.at("data"), c.data);
        c.out = j.value("out", c.out);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config field error in " + path + ": " + e.what());
    }
    return c;
}

// The frozen, fully resolved copy written next to every run's outputs.
inline void save_resolved_config(const std::string& path, const RunConfig& c, const ChangeNetConfig& resolved_net) {
    json j;
    j["ablation"] = cfg_json::dump_ablation(c.ablation);
    j["network"] = cfg_json::dump_network(resolved_net);
    j["train"] = cfg_json::dump_train(c.train);
    j["augment"] = cfg_json::dump_augment(c.augment);
    j["data"] = cfg_json::dump_data(c.data);
    j["out"] = c.out;
    std::ofstream os(path);
    if (!os) throw DataError("cannot write resolved config: " + path);
    os << j.dump(2) << "\n";
}

}  // namespace hsacnet
