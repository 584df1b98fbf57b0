#include "sct/training.hpp"

#include "sct/metrics.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace sct {

std::string to_string(Task t) {
    switch (t) {
        case Task::Detection: return "detection";
        case Task::Grading: return "grading";
        case Task::Sensitive: return "sensitive";
        case Task::Specific: return "specific";
    }
    return "detection";
}

std::string to_string(ModelKind k) { return k == ModelKind::Sct ? "sct" : "abmil"; }

Task parse_task(const std::string& s) {
    if (s == "detection") return Task::Detection;
    if (s == "grading") return Task::Grading;
    if (s == "sensitive") return Task::Sensitive;
    if (s == "specific") return Task::Specific;
    fail(ErrorKind::Usage, "unknown task '" + s + "' (expected detection, grading, sensitive or specific)");
}

ModelKind parse_model_kind(const std::string& s) {
    if (s == "sct") return ModelKind::Sct;
    if (s == "abmil") return ModelKind::Abmil;
    fail(ErrorKind::Usage, "unknown model kind '" + s + "' (expected sct or abmil)");
}

ClassWeights default_weights(Task task) {
    if (task == Task::Sensitive) return {1.0, 8.0};
    if (task == Task::Specific) return {8.0, 1.0};
    return {1.0, 1.0};
}

void TrainConfig::validate() const {
    if (epochs < 0) fail(ErrorKind::Config, "train.epochs must be >= 0");
    if (batch_size < 1) fail(ErrorKind::Config, "train.batch_size must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) fail(ErrorKind::Config, "train.lr must be finite and >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail(ErrorKind::Config, "Adam betas must lie in [0, 1)");
    if (!(eps > 0)) fail(ErrorKind::Config, "train.eps must be > 0");
    const auto w = class_weights();
    if (!(w.benign > 0) || !(w.carcinoma > 0)) fail(ErrorKind::Config, "class weights must be > 0");
    if (patience < 1) fail(ErrorKind::Config, "train.patience must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1)) fail(ErrorKind::Config, "train.val_fraction must lie in [0, 1)");
    if (threads < 1) fail(ErrorKind::Config, "threads must be >= 1");
}

// --- losses ---------------------------------------------------------------------------------

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

bool clamped(double p) { return p < kProbClamp || p > 1.0 - kProbClamp; }

int binary_label(DetectionLabel label) {
    if (label == DetectionLabel::Benign) return 0;
    if (label == DetectionLabel::Carcinoma) return 1;
    fail(ErrorKind::Data, "detection loss needs a known label");
}

// dL/dlogit for p = sigmoid(logit); the p(1-p) factor is folded in to avoid cancellation.
double detection_logit_grad(double p, DetectionLabel label, const ClassWeights& w) {
    if (clamped(p)) return 0.0;
    return binary_label(label) == 1 ? w.carcinoma * (p - 1.0) : w.benign * p;
}

void check_grading_label(const GradingLabel& label, DetectionLabel detection) {
    const bool pn = label.primary == Pattern::None;
    const bool sn = label.secondary == Pattern::None;
    if (pn != sn) fail(ErrorKind::Data, "grading label must have both patterns or neither");
    if (pn && detection == DetectionLabel::Carcinoma) fail(ErrorKind::Data, "carcinoma block has no Gleason patterns");
    if (!pn && detection == DetectionLabel::Benign) fail(ErrorKind::Data, "benign block carries Gleason patterns");
}

}  // namespace

double loss_detection(double p, DetectionLabel label, const ClassWeights& w) {
    const double q = clamp_prob(p);
    return binary_label(label) == 1 ? -w.carcinoma * std::log(q) : -w.benign * std::log(1.0 - q);
}

double loss_detection_grad(double p, DetectionLabel label, const ClassWeights& w) {
    if (clamped(p)) {
        binary_label(label);
        return 0.0;
    }
    return binary_label(label) == 1 ? -w.carcinoma / p : w.benign / (1.0 - p);
}

double loss_grading(const std::array<double, 4>& primary, const std::array<double, 4>& secondary,
                    const GradingLabel& label, DetectionLabel detection) {
    check_grading_label(label, detection);
    const auto a = static_cast<std::size_t>(pattern_class(label.primary));
    const auto b = static_cast<std::size_t>(pattern_class(label.secondary));
    return -std::log(clamp_prob(primary[a])) - std::log(clamp_prob(secondary[b]));
}

// --- models ---------------------------------------------------------------------------------

ModelKind kind_of(const TrainedModel& m) { return m.index() == 0 ? ModelKind::Sct : ModelKind::Abmil; }

double predict_score(const TrainedModel& m, const Block& block) {
    if (const auto* sct = std::get_if<SctModelParams<float>>(&m)) {
        if (sct->config.head == HeadKind::Grading) return 1.0 - model_forward_grade(block, *sct).primary[0];
        return model_forward_detect(block, *sct);
    }
    return abmil_forward(block, std::get<AbmilParams<float>>(m));
}

namespace {

struct Objective {
    bool grading = false;
    ClassWeights weights;
};

struct Sample {
    const Block* block = nullptr;
    BlockPlan plan;
    Mat<float> x;
    GradingLabel grading;
};

template <class T>
std::vector<Mat<T>*> tensor_ptrs(auto& params) {
    std::vector<Mat<T>*> out;
    std::remove_reference_t<decltype(params)>::visit(params, "", [&](const std::string&, Mat<T>& m) { out.push_back(&m); });
    return out;
}

struct SctAdapter {
    using Params = SctModelParams<float>;
    SctConfig cfg;

    Params init(std::uint64_t seed) const { return init_sct<float>(cfg, seed); }

    void prepare(Sample& s) const {
        s.plan = make_plan(*s.block, cfg);
        s.x = ordered_features<float>(*s.block, s.plan);
    }

    // Loss of one block; accumulates scale * dLoss into grad.
    double step(const Params& p, const Sample& s, const Objective& obj, double scale, Params& grad) const {
        SctTrace<float> trace;
        const auto out = sct_forward(p, s.plan, s.x, &trace);
        HeadGradient<float> hg;
        double loss = 0;
        if (obj.grading) {
            std::array<double, 4> pr{}, se{};
            for (int c = 0; c < 4; ++c) {
                pr[c] = out.primary(0, c);
                se[c] = out.secondary(0, c);
            }
            loss = loss_grading(pr, se, s.grading, s.block->label);
            const auto ce_grad = [&](const Mat<float>& probs, Pattern target) {
                const int t = pattern_class(target);
                Mat<float> d = probs;
                if (clamped(probs(0, t))) return Mat<float>(Mat<float>::Zero(1, 4));
                d(0, t) -= 1.0f;
                return Mat<float>(d * static_cast<float>(scale));
            };
            hg.d_primary_logits = ce_grad(out.primary, s.grading.primary);
            hg.d_secondary_logits = ce_grad(out.secondary, s.grading.secondary);
        } else {
            loss = loss_detection(out.probability, s.block->label, obj.weights);
            hg.d_logit = static_cast<float>(scale * detection_logit_grad(out.probability, s.block->label, obj.weights));
        }
        sct_backward(p, s.plan, trace, hg, grad);
        return loss;
    }

    double score(const Params& p, const Sample& s) const {
        const auto out = sct_forward(p, s.plan, s.x, static_cast<SctTrace<float>*>(nullptr));
        if (p.config.head == HeadKind::Grading) return 1.0 - static_cast<double>(out.primary(0, 0));
        return out.probability;
    }
};

struct AbmilAdapter {
    using Params = AbmilParams<float>;
    AbmilConfig cfg;

    Params init(std::uint64_t seed) const { return init_abmil<float>(cfg, seed); }

    void prepare(Sample& s) const { s.x = s.block->features; }

    double step(const Params& p, const Sample& s, const Objective& obj, double scale, Params& grad) const {
        AbmilTrace<float> trace;
        const auto out = abmil_forward(p, s.x, &trace);
        const double loss = loss_detection(out.probability, s.block->label, obj.weights);
        const auto dl = static_cast<float>(scale * detection_logit_grad(out.probability, s.block->label, obj.weights));
        abmil_backward(p, trace, dl, grad);
        return loss;
    }

    double score(const Params& p, const Sample& s) const {
        return abmil_forward(p, s.x, static_cast<AbmilTrace<float>*>(nullptr)).probability;
    }
};

template <class P>
struct Adam {
    P m, v;
    long t = 0;

    explicit Adam(const P& params) : m(zeros_like(params)), v(zeros_like(params)) {}

    void step(P& params, P& grad, const TrainConfig& cfg) {
        ++t;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        const auto ps = tensor_ptrs<float>(params);
        const auto gs = tensor_ptrs<float>(grad);
        const auto ms = tensor_ptrs<float>(m);
        const auto vs = tensor_ptrs<float>(v);
        const auto b1 = static_cast<float>(cfg.beta1);
        const auto b2 = static_cast<float>(cfg.beta2);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto g = gs[i]->array();
            ms[i]->array() = b1 * ms[i]->array() + (1.0f - b1) * g;
            vs[i]->array() = b2 * vs[i]->array() + (1.0f - b2) * g.square();
            if (cfg.lr == 0) continue;
            const auto mhat = ms[i]->array() / static_cast<float>(c1);
            const auto vhat = vs[i]->array() / static_cast<float>(c2);
            ps[i]->array() -= static_cast<float>(cfg.lr) * mhat / (vhat.sqrt() + static_cast<float>(cfg.eps));
        }
    }
};

template <class P>
void add_into(P& acc, P& g) {
    const auto a = tensor_ptrs<float>(acc);
    const auto b = tensor_ptrs<float>(g);
    for (std::size_t i = 0; i < a.size(); ++i) *a[i] += *b[i];
}

template <class P>
bool all_finite(P& p) {
    for (auto* m : tensor_ptrs<float>(p))
        if (!m->allFinite()) return false;
    return true;
}

double validation_auc(const auto& adapter, const auto& params, const std::vector<Sample>& val) {
    std::vector<double> scores;
    std::vector<int> labels;
    bool pos = false, neg = false;
    for (const auto& s : val) {
        scores.push_back(adapter.score(params, s));
        const int l = s.block->label == DetectionLabel::Carcinoma ? 1 : 0;
        labels.push_back(l);
        (l ? pos : neg) = true;
    }
    if (!pos || !neg) return std::numeric_limits<double>::quiet_NaN();
    return roc_auc(scores, labels).auc;
}

template <class Adapter>
TrainResult run_training(const Adapter& adapter, const std::vector<Block>& train_set, const std::vector<Block>& val_set,
                         const TrainConfig& cfg, const Objective& obj) {
    using P = typename Adapter::Params;
    const auto t0 = std::chrono::steady_clock::now();
    const auto prepare = [&](const std::vector<Block>& blocks) {
        std::vector<Sample> out(blocks.size());
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            out[i].block = &blocks[i];
            if (obj.grading) out[i].grading = blocks[i].grading.value_or(GradingLabel{});
            adapter.prepare(out[i]);
        }
        return out;
    };
    const auto train_samples = prepare(train_set);
    const auto val_samples = prepare(val_set);

    P params = adapter.init(Rng::derive(cfg.seed, 0));
    P best = params;
    Adam<P> adam(params);
    TrainHistory hist;
    double best_auc = -1;
    int since_best = 0;

    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);
    long global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle(Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            ++global_step;
            const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            const double scale = 1.0 / static_cast<double>(n);
            std::vector<P> grads(n, zeros_like(params));
            std::vector<double> losses(n, 0.0);
            const auto work = [&](std::size_t first, std::size_t stride) {
                for (std::size_t j = first; j < n; j += stride)
                    losses[j] = adapter.step(params, train_samples[order[start + j]], obj, scale, grads[j]);
            };
            const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n);
            if (nthreads <= 1) {
                work(0, 1);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work, t, nthreads);
                for (auto& th : pool) th.join();
            }
            // Summation in block-index order keeps the result independent of the thread count.
            double batch_loss = 0;
            for (std::size_t j = 0; j < n; ++j) {
                batch_loss += losses[j];
                if (j > 0) add_into(grads[0], grads[j]);
            }
            if (!std::isfinite(batch_loss) || !all_finite(grads[0]))
                fail(ErrorKind::Divergence, "non-finite loss or gradient at epoch " + std::to_string(epoch + 1) + ", step " +
                                                std::to_string(global_step));
            adam.step(params, grads[0], cfg);
            if (!all_finite(params))
                fail(ErrorKind::Divergence, "parameters became non-finite at epoch " + std::to_string(epoch + 1) + ", step " +
                                                std::to_string(global_step));
            epoch_loss += batch_loss;
        }
        const double auc = validation_auc(adapter, params, val_samples);
        hist.loss.push_back(train_samples.empty() ? 0.0 : epoch_loss / static_cast<double>(train_samples.size()));
        hist.val_auc.push_back(auc);
        hist.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (std::isnan(auc)) {
            best = params;
            hist.best_epoch = epoch;
            continue;
        }
        if (auc > best_auc) {
            best_auc = auc;
            best = params;
            hist.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            hist.stopped_early = true;
            break;
        }
    }
    return {TrainedModel(std::move(best)), std::move(hist)};
}

void check_labels(const std::vector<Block>& blocks, bool grading, const char* what) {
    for (const auto& b : blocks) {
        if (b.label == DetectionLabel::Unknown) fail(ErrorKind::Data, std::string(what) + " block '" + b.id + "' has an Unknown label");
        if (grading) {
            try {
                check_grading_label(b.grading.value_or(GradingLabel{}), b.label);
            } catch (const Error& e) {
                fail(ErrorKind::Data, std::string(what) + " block '" + b.id + "': " + e.what());
            }
        }
    }
}

}  // namespace

TrainResult train(const std::vector<Block>& train_set, const std::vector<Block>& val_set, const TrainConfig& cfg,
                  const ModelSpec& spec) {
    cfg.validate();
    const bool grading = cfg.task == Task::Grading;
    check_labels(train_set, grading, "training");
    check_labels(val_set, grading, "validation");
    bool pos = false, neg = false;
    for (const auto& b : train_set) (b.label == DetectionLabel::Carcinoma ? pos : neg) = true;
    if (!pos || !neg) fail(ErrorKind::Data, "training data needs at least one benign and one carcinoma block");

    const Objective obj{grading, cfg.class_weights()};
    if (spec.kind == ModelKind::Abmil) {
        if (grading) fail(ErrorKind::Unsupported, "the attention-MIL baseline only supports detection tasks");
        AbmilAdapter a{spec.abmil};
        for (const auto& b : train_set)
            if (b.dim() != a.cfg.input_dim) fail(ErrorKind::Config, "block '" + b.id + "' feature dimension does not match the model");
        return run_training(a, train_set, val_set, cfg, obj);
    }
    SctAdapter a{spec.sct};
    a.cfg.head = grading ? HeadKind::Grading : HeadKind::Detection;
    a.cfg.validate();
    return run_training(a, train_set, val_set, cfg, obj);
}

TrainResult train(const std::vector<Block>& data, const TrainConfig& cfg, const ModelSpec& spec) {
    cfg.validate();
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].label == DetectionLabel::Unknown) fail(ErrorKind::Data, "block '" + data[i].id + "' has an Unknown label");
        by_class[data[i].label == DetectionLabel::Carcinoma ? 1 : 0].push_back(i);
    }
    std::vector<std::uint8_t> held(data.size(), 0);
    Rng rng(Rng::derive(cfg.seed, 17));
    for (auto& idx : by_class) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(idx.size())));
        if (n_val >= idx.size()) n_val = idx.size() > 0 ? idx.size() - 1 : 0;
        for (std::size_t j = 0; j < n_val; ++j) held[idx[j]] = 1;
    }
    std::vector<Block> tr, va;
    for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? va : tr).push_back(data[i]);
    return train(tr, va, cfg, spec);
}

}  // namespace sct
