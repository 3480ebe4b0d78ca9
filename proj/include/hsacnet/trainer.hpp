#pragma once
// Semi-supervised training: supervised CE on weakly augmented labeled pairs,
// confidence-thresholded pseudo-labels from the weak view of unlabeled
// pairs, dual strong views trained toward those labels, weighted total,
// AdamW with a cosine-annealed learning rate.

#include <algorithm>
#include <iomanip>

#include "hsacnet/augment.hpp"
#include "hsacnet/eval.hpp"
#include "hsacnet/network.hpp"

namespace hsacnet {

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double tau = 0.95;
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double lr_init = 3e-4;
    double lr_final = 1e-6;
    int64_t epochs = 80;
    int64_t batch_size = 4;  // per stream: this many labeled plus this many unlabeled pairs
    double weight_decay = 1e-6;
    double momentum_beta = 0.9;  // Adam beta1
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string low_conf_mode = "label-zero";  // label-zero (literal) | ignore
    uint64_t seed = 0;
    int64_t val_interval = 5;
    bool sup_only = false;

    void validate() const {
        check(tau > 0.0 && tau <= 1.0, "train config: tau must lie in (0,1]");
        check(lambda1 >= 0.0 && lambda2 >= 0.0, "train config: loss weights must be >= 0");
        check(lr_final <= lr_init, "train config: lr_final must not exceed lr_init");
        check(epochs >= 1 && batch_size >= 1, "train config: epochs and batch_size must be positive");
        check(low_conf_mode == "label-zero" || low_conf_mode == "ignore",
              "train config: low_conf_mode must be label-zero or ignore");
        check(val_interval >= 1, "train config: val_interval must be >= 1");
    }
};

// Cosine annealing evaluated at integer epochs; t runs over [0, epochs] so
// the schedule starts at lr_init, passes the exact midpoint at epochs/2 and
// anneals to lr_final at t = epochs.
inline double cosine_lr(const TrainConfig& cfg, int64_t t) {
    const double frac = static_cast<double>(t) / static_cast<double>(cfg.epochs);
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(M_PI * frac));
}

struct LossBreakdown {
    double l_s = 0;
    double l_u = 0;
    double total = 0;
    double pseudo_positive_fraction = 0;
    double high_conf_fraction = 0;
    bool unsup_evaluated = false;
    int64_t zero_valid_batches = 0;
};

struct PseudoLabelMap {
    Tensor<uint8_t> labels;  // (N,H,W) in {0,1}
    Tensor<uint8_t> valid;   // (N,H,W); all ones in label-zero mode
};

template <class T>
Tensor<int32_t> mask_to_target(const Tensor<uint8_t>& mask) {
    Tensor<int32_t> t(mask.shape);
    for (int64_t i = 0; i < mask.numel(); ++i) {
        check(mask[i] <= 1, "labels must be binary");
        t[i] = mask[i];
    }
    return t;
}

// Mean pixelwise 2-class cross entropy between logits and a binary mask.
template <class T>
Var<T> supervised_loss(const Var<T>& logits, const Tensor<uint8_t>& label) {
    return ops::cross_entropy_mean(logits, mask_to_target<T>(label), {});
}

// Y^u = 1 where p > tau (strict), else 0. In "ignore" mode the ambiguous
// band [1-tau, tau] is masked out of the loss instead of trained as 0.
template <class T>
PseudoLabelMap make_pseudo_labels(const Tensor<T>& p_uw, double tau, const std::string& low_conf_mode = "label-zero") {
    PseudoLabelMap out;
    out.labels = Tensor<uint8_t>(p_uw.shape);
    out.valid = Tensor<uint8_t>(p_uw.shape);
    for (int64_t i = 0; i < p_uw.numel(); ++i) {
        const double p = static_cast<double>(p_uw[i]);
        check(p >= 0.0 && p <= 1.0, "make_pseudo_labels: probabilities must lie in [0,1]");
        out.labels[i] = p > tau ? 1 : 0;
        out.valid[i] = low_conf_mode == "ignore" ? ((p > tau || p < 1.0 - tau) ? 1 : 0) : 1;
    }
    return out;
}

// (CE(s1, Y^u) + CE(s2, Y^u)) / 2 over valid pixels; pseudo labels are plain
// tensors, so no gradient can reach the weak view.
template <class T>
Var<T> unsupervised_loss(const Var<T>& logits_s1, const Var<T>& logits_s2, const PseudoLabelMap& y_u,
                         int64_t* zero_valid_counter = nullptr) {
    auto target = mask_to_target<T>(y_u.labels);
    int64_t count1 = 0;
    auto l1 = ops::cross_entropy_mean(logits_s1, target, y_u.valid, &count1);
    auto l2 = ops::cross_entropy_mean(logits_s2, target, y_u.valid);
    if (count1 == 0 && zero_valid_counter) ++(*zero_valid_counter);
    return ops::linear_combo(l1, l2, T(0.5), T(0.5));
}

// total = lambda1 * l_s + lambda2 * l_u, with the breakdown populated.
template <class T>
std::pair<Var<T>, LossBreakdown> total_loss(const Var<T>& l_s, const Var<T>& l_u, const TrainConfig& cfg) {
    auto tot = ops::linear_combo(l_s, l_u, static_cast<T>(cfg.lambda1), static_cast<T>(cfg.lambda2));
    LossBreakdown b;
    b.l_s = static_cast<double>(l_s->value[0]);
    b.l_u = static_cast<double>(l_u->value[0]);
    b.total = static_cast<double>(tot->value[0]);
    if (!std::isfinite(b.total))
        throw TrainingDiverged("loss is not finite (l_s=" + std::to_string(b.l_s) +
                               ", l_u=" + std::to_string(b.l_u) + ")");
    return {tot, b};
}

// Decoupled-weight-decay Adam over the trainable parameters.
template <class T>
class AdamW {
public:
    AdamW(std::vector<nn::Param<T>*> params, const TrainConfig& cfg)
        : params_(std::move(params)),
          beta1_(cfg.momentum_beta),
          beta2_(cfg.adam_beta2),
          eps_(cfg.adam_eps),
          weight_decay_(cfg.weight_decay) {
        for (auto* p : params_) {
            m_.emplace_back(Tensor<T>::zeros(p->var->value.shape));
            v_.emplace_back(Tensor<T>::zeros(p->var->value.shape));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto* p = params_[i];
            if (!p->trainable || p->var->grad.numel() == 0) continue;
            auto& val = p->var->value;
            auto& g = p->var->grad;
            for (int64_t j = 0; j < val.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * gj;
                const double vj = beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * gj * gj;
                m_[i][j] = static_cast<T>(mj);
                v_[i][j] = static_cast<T>(vj);
                const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_);
                double x = static_cast<double>(val[j]);
                x -= lr * weight_decay_ * x;
                x -= lr * update;
                val[j] = static_cast<T>(x);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    std::vector<nn::Param<T>*> params_;
    std::vector<Tensor<T>> m_, v_;
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
};

namespace detail_train {

template <class T>
void stack_pair_batch(const std::vector<BiTemporalPair<T>>& pairs, Tensor<T>& a, Tensor<T>& b) {
    const int64_t N = static_cast<int64_t>(pairs.size());
    const int64_t H = pairs[0].height(), W = pairs[0].width();
    a = Tensor<T>({N, 3, H, W});
    b = Tensor<T>({N, 3, H, W});
    for (int64_t n = 0; n < N; ++n) {
        std::copy(pairs[static_cast<size_t>(n)].image_a.data.begin(), pairs[static_cast<size_t>(n)].image_a.data.end(),
                  a.data.begin() + n * 3 * H * W);
        std::copy(pairs[static_cast<size_t>(n)].image_b.data.begin(), pairs[static_cast<size_t>(n)].image_b.data.end(),
                  b.data.begin() + n * 3 * H * W);
    }
}

inline Tensor<uint8_t> stack_masks(const std::vector<Tensor<uint8_t>>& masks) {
    const int64_t N = static_cast<int64_t>(masks.size());
    const int64_t H = masks[0].shape[0], W = masks[0].shape[1];
    Tensor<uint8_t> out({N, H, W});
    for (int64_t n = 0; n < N; ++n)
        std::copy(masks[static_cast<size_t>(n)].data.begin(), masks[static_cast<size_t>(n)].data.end(),
                  out.data.begin() + n * H * W);
    return out;
}

inline std::vector<Tensor<uint8_t>> unstack_masks(const Tensor<uint8_t>& batch) {
    std::vector<Tensor<uint8_t>> out;
    const int64_t N = batch.shape[0], H = batch.shape[1], W = batch.shape[2];
    for (int64_t n = 0; n < N; ++n) {
        Tensor<uint8_t> m({H, W});
        std::copy(batch.data.begin() + n * H * W, batch.data.begin() + (n + 1) * H * W, m.data.begin());
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace detail_train

// One optimizer update. Labeled pairs get the weak augmentation; unlabeled
// pairs get a weak view (pseudo-label source, no gradient) plus two strong
// views mixed by shared CutMix boxes together with the pseudo labels.
template <class T>
LossBreakdown train_step(nn::ChangeNet<T>& net, AdamW<T>& opt, const std::vector<BiTemporalPair<T>>& labeled,
                         const std::vector<BiTemporalPair<T>>& unlabeled, const TrainConfig& cfg,
                         const AugmentSpec& aug, RandomStream& rng, double lr) {
    check(!labeled.empty(), "train_step: the supervised term is mandatory; labeled batch is empty");
    net.set_training(true);

    // supervised stream
    std::vector<BiTemporalPair<T>> lab_views;
    std::vector<Tensor<uint8_t>> lab_masks;
    for (size_t i = 0; i < labeled.size(); ++i) {
        check(labeled[i].has_label(), "train_step: labeled pair lacks a mask");
        RandomStream r = rng.derive("lab" + std::to_string(i));
        auto [view, geom] = weak_augment(labeled[i], aug, r);
        lab_masks.push_back(view.label);
        lab_views.push_back(std::move(view));
    }
    Tensor<T> la, lb;
    detail_train::stack_pair_batch(lab_views, la, lb);
    auto lab_logits = net.forward(make_var(la), make_var(lb));
    auto l_s = supervised_loss(lab_logits, detail_train::stack_masks(lab_masks));

    const bool semi = cfg.lambda2 > 0.0 && !cfg.sup_only && !unlabeled.empty();
    Var<T> l_u = make_var(Tensor<T>::scalar(T(0)));
    LossBreakdown breakdown;
    if (semi) {
        std::vector<BiTemporalPair<T>> weak_views;
        for (size_t i = 0; i < unlabeled.size(); ++i) {
            RandomStream r = rng.derive("unl" + std::to_string(i));
            weak_views.push_back(weak_augment(unlabeled[i], aug, r).first);
        }
        // pseudo labels from the weak view, no gradient
        Tensor<T> ua, ub;
        detail_train::stack_pair_batch(weak_views, ua, ub);
        Tensor<T> prob;
        {
            NoGrad ng;
            auto weak_logits = net.forward(make_var(ua), make_var(ub));
            prob = prob_change_map(weak_logits->value);
        }
        auto pseudo = make_pseudo_labels(prob, cfg.tau, cfg.low_conf_mode);
        int64_t pos = 0, high = 0;
        for (int64_t i = 0; i < prob.numel(); ++i) {
            pos += pseudo.labels[i];
            const double p = static_cast<double>(prob[i]);
            high += (p > cfg.tau || p < 1.0 - cfg.tau) ? 1 : 0;
        }
        breakdown.pseudo_positive_fraction = static_cast<double>(pos) / static_cast<double>(prob.numel());
        breakdown.high_conf_fraction = static_cast<double>(high) / static_cast<double>(prob.numel());

        // two strong views, then CutMix with shared boxes
        std::vector<BiTemporalPair<T>> s1, s2;
        for (size_t i = 0; i < weak_views.size(); ++i) {
            RandomStream r1 = rng.derive("s1." + std::to_string(i));
            RandomStream r2 = rng.derive("s2." + std::to_string(i));
            s1.push_back(strong_augment(weak_views[i], aug, r1));
            s2.push_back(strong_augment(weak_views[i], aug, r2));
        }
        auto label_maps = detail_train::unstack_masks(pseudo.labels);
        auto valid_maps = detail_train::unstack_masks(pseudo.valid);
        if (weak_views.size() >= 2) {
            RandomStream rbox = rng.derive("cutmix");
            auto boxes = make_cutmix_boxes(static_cast<int64_t>(weak_views.size()), weak_views[0].height(), aug, rbox);
            std::vector<Tensor<T>> imgs;
            auto mix_pairs = [&](std::vector<BiTemporalPair<T>>& views) {
                std::vector<Tensor<T>> as, bs;
                for (auto& v : views) {
                    as.push_back(std::move(v.image_a));
                    bs.push_back(std::move(v.image_b));
                }
                apply_cutmix_images(as, boxes);
                apply_cutmix_images(bs, boxes);
                for (size_t i = 0; i < views.size(); ++i) {
                    views[i].image_a = std::move(as[i]);
                    views[i].image_b = std::move(bs[i]);
                }
            };
            mix_pairs(s1);
            mix_pairs(s2);
            apply_cutmix_maps(label_maps, boxes);
            apply_cutmix_maps(valid_maps, boxes);
        }
        PseudoLabelMap mixed;
        mixed.labels = detail_train::stack_masks(label_maps);
        mixed.valid = detail_train::stack_masks(valid_maps);

        Tensor<T> s1a, s1b, s2a, s2b;
        detail_train::stack_pair_batch(s1, s1a, s1b);
        detail_train::stack_pair_batch(s2, s2a, s2b);
        auto logits_s1 = net.forward(make_var(s1a), make_var(s1b));
        auto logits_s2 = net.forward(make_var(s2a), make_var(s2b));
        l_u = unsupervised_loss(logits_s1, logits_s2, mixed, &breakdown.zero_valid_batches);
        breakdown.unsup_evaluated = true;
    }

    auto [tot, tb] = total_loss(l_s, l_u, cfg);
    breakdown.l_s = tb.l_s;
    breakdown.l_u = tb.l_u;
    breakdown.total = tb.total;

    net.zero_grads();
    backward(tot);
    opt.step(lr);
    net.zero_grads();
    return breakdown;
}

struct EpochRecord {
    int64_t epoch = 0;
    double lr = 0;
    double l_s = 0, l_u = 0, total = 0;
    double pseudo_positive_fraction = 0, high_conf_fraction = 0;
    double val_iou = -1, val_oa = -1;  // negative when not evaluated this epoch
};

struct TrainingReport {
    std::vector<EpochRecord> epochs;
    int64_t best_epoch = -1;
    double best_val_iou = -1;
    double final_val_iou = -1, final_val_oa = -1;
    std::string best_checkpoint, last_checkpoint;
    int64_t steps_per_epoch = 0;
    int64_t zero_valid_batches = 0;
};

inline void save_report(const std::string& path, const TrainingReport& r) {
    json j;
    j["best_epoch"] = r.best_epoch;
    j["best_val_iou"] = r.best_val_iou;
    j["final_val_iou"] = r.final_val_iou;
    j["final_val_oa"] = r.final_val_oa;
    j["best_checkpoint"] = r.best_checkpoint;
    j["last_checkpoint"] = r.last_checkpoint;
    j["steps_per_epoch"] = r.steps_per_epoch;
    j["zero_valid_batches"] = r.zero_valid_batches;
    j["epochs"] = json::array();
    for (const auto& e : r.epochs) {
        json je{{"epoch", e.epoch},
                {"lr", e.lr},
                {"l_s", e.l_s},
                {"l_u", e.l_u},
                {"total", e.total},
                {"pseudo_positive_fraction", e.pseudo_positive_fraction},
                {"high_conf_fraction", e.high_conf_fraction}};
        if (e.val_iou >= 0) {
            je["val_iou"] = e.val_iou;
            je["val_oa"] = e.val_oa;
        }
        j["epochs"].push_back(std::move(je));
    }
    std::ofstream os(path);
    if (!os) throw DataError("cannot write training report: " + path);
    os << j.dump(2) << "\n";
}

// Full training run. labeled/unlabeled describe the (already partitioned)
// train split; val drives checkpoint selection. Writes best/last checkpoints
// plus report.json and steps.jsonl under out_dir.
template <class T>
TrainingReport fit(nn::ChangeNet<T>& net, const DatasetManifest& labeled, const DatasetManifest& unlabeled,
                   const DatasetManifest& val, const std::string& root, const TrainConfig& cfg,
                   const AugmentSpec& aug, const std::string& out_dir, bool quiet = false) {
    cfg.validate();
    aug.validate();
    check(!labeled.labeled.empty(), "fit: at least one labeled pair is required");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<BiTemporalPair<T>> lab_pairs, unl_pairs;
    for (const auto& r : labeled.labeled) lab_pairs.push_back(load_pair<T>(r, root));
    for (const auto& r : unlabeled.unlabeled) unl_pairs.push_back(load_pair<T>(r, root));

    const bool semi = cfg.lambda2 > 0.0 && !cfg.sup_only && !unl_pairs.empty();
    const int64_t lab_batches =
        std::max<int64_t>(1, static_cast<int64_t>(lab_pairs.size()) / cfg.batch_size);
    const int64_t unl_batches =
        semi ? std::max<int64_t>(1, static_cast<int64_t>(unl_pairs.size()) / cfg.batch_size) : 0;
    const int64_t steps = semi ? std::min(lab_batches, unl_batches) : lab_batches;

    AdamW<T> opt(net.params(), cfg);
    RandomStream master(cfg.seed);
    TrainingReport report;
    report.steps_per_epoch = steps;
    report.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    report.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();

    std::ofstream steps_log((fs::path(out_dir) / "steps.jsonl").string());
    auto save_net = [&](const std::string& path) { save_archive<T>(path, net.export_tensors()); };

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(cfg, epoch);
        auto shuffle = [&](size_t n, const std::string& tag) {
            std::vector<size_t> idx(n);
            for (size_t i = 0; i < n; ++i) idx[i] = i;
            RandomStream r = master.derive("epoch" + std::to_string(epoch) + "." + tag);
            for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<size_t>(r.uniform_int(i))]);
            return idx;
        };
        auto lab_idx = shuffle(lab_pairs.size(), "labshuffle");
        auto unl_idx = semi ? shuffle(unl_pairs.size(), "unlshuffle") : std::vector<size_t>{};

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        for (int64_t s = 0; s < steps; ++s) {
            std::vector<BiTemporalPair<T>> lab_batch, unl_batch;
            for (int64_t k = 0; k < cfg.batch_size; ++k)
                lab_batch.push_back(lab_pairs[lab_idx[static_cast<size_t>((s * cfg.batch_size + k) %
                                                                          static_cast<int64_t>(lab_pairs.size()))]]);
            if (semi)
                for (int64_t k = 0; k < cfg.batch_size; ++k)
                    unl_batch.push_back(
                        unl_pairs[unl_idx[static_cast<size_t>((s * cfg.batch_size + k) %
                                                              static_cast<int64_t>(unl_pairs.size()))]]);
            RandomStream step_rng = master.derive("epoch" + std::to_string(epoch) + ".step" + std::to_string(s));
            LossBreakdown b;
            try {
                b = train_step(net, opt, lab_batch, unl_batch, cfg, aug, step_rng, lr);
            } catch (const TrainingDiverged& e) {
                save_report((fs::path(out_dir) / "report.json").string(), report);
                throw TrainingDiverged(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(s) + "; last good checkpoint: " + report.last_checkpoint);
            }
            rec.l_s += b.l_s;
            rec.l_u += b.l_u;
            rec.total += b.total;
            rec.pseudo_positive_fraction += b.pseudo_positive_fraction;
            rec.high_conf_fraction += b.high_conf_fraction;
            report.zero_valid_batches += b.zero_valid_batches;
            if (steps_log)
                steps_log << json{{"epoch", epoch}, {"step", s},          {"lr", lr},
                                  {"l_s", b.l_s},   {"l_u", b.l_u},       {"total", b.total}}
                                 .dump()
                          << "\n";
        }
        rec.l_s /= static_cast<double>(steps);
        rec.l_u /= static_cast<double>(steps);
        rec.total /= static_cast<double>(steps);
        rec.pseudo_positive_fraction /= static_cast<double>(steps);
        rec.high_conf_fraction /= static_cast<double>(steps);

        const bool last = epoch + 1 == cfg.epochs;
        if (!val.labeled.empty() && (epoch % cfg.val_interval == cfg.val_interval - 1 || last || epoch == 0)) {
            auto ev = evaluate(net, val, root);
            rec.val_iou = ev.iou;
            rec.val_oa = ev.oa_v;
            if (ev.iou > report.best_val_iou) {
                report.best_val_iou = ev.iou;
                report.best_epoch = epoch;
                save_net(report.best_checkpoint);
            }
            if (last) {
                report.final_val_iou = ev.iou;
                report.final_val_oa = ev.oa_v;
            }
        }
        save_net(report.last_checkpoint);
        report.epochs.push_back(rec);
        if (!quiet) {
            std::ostringstream line;
            line << "epoch " << std::setw(3) << epoch << "  lr " << std::scientific << std::setprecision(3) << lr
                 << "  l_s " << std::fixed << std::setprecision(4) << rec.l_s << "  l_u " << rec.l_u;
            if (rec.val_iou >= 0) line << "  val_iou " << std::setprecision(4) << rec.val_iou;
            std::fprintf(stderr, "%s\n", line.str().c_str());
        }
    }
    if (report.best_epoch < 0) {
        // no validation happened; keep the last state as best
        report.best_val_iou = -1;
        save_net(report.best_checkpoint);
    }
    save_report((fs::path(out_dir) / "report.json").string(), report);
    return report;
}

}  // namespace hsacnet
