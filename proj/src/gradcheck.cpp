#include "sct/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

namespace sct {

namespace {

const std::vector<std::pair<GradOp, const char*>>& op_names() {
    static const std::vector<std::pair<GradOp, const char*>> names{
        {GradOp::Linear, "linear"},          {GradOp::LayerNorm, "layernorm"},
        {GradOp::Mlp, "mlp"},                {GradOp::Esa, "esa"},
        {GradOp::SscSa, "sscsa"},            {GradOp::SspMax, "ssp_max"},
        {GradOp::SspAvg, "ssp_avg"},         {GradOp::Mha, "mha"},
        {GradOp::DetectionHead, "detection_head"}, {GradOp::GradingHead, "grading_head"},
        {GradOp::Abmil, "abmil"},            {GradOp::SctBlock, "sct_block"},
        {GradOp::SctModel, "sct_model"},     {GradOp::SctModelGrading, "sct_model_grading"},
    };
    return names;
}

}  // namespace

std::string to_string(GradOp op) {
    for (const auto& [o, n] : op_names())
        if (o == op) return n;
    return "?";
}

GradOp parse_grad_op(const std::string& s) {
    for (const auto& [o, n] : op_names())
        if (s == n) return o;
    std::string known;
    for (const auto& [o, n] : op_names()) known += (known.empty() ? "" : ", ") + std::string(n);
    fail(ErrorKind::Usage, "unknown gradcheck op '" + s + "' (known: " + known + ")");
}

std::vector<GradOp> all_grad_ops() {
    std::vector<GradOp> v;
    for (const auto& [o, n] : op_names()) v.push_back(o);
    return v;
}

double GradcheckReport::worst() const {
    double w = 0;
    for (const auto& t : tensors) w = std::max(w, t.max_rel_error);
    return w;
}

std::string GradcheckReport::worst_tensor() const {
    const TensorError* w = nullptr;
    for (const auto& t : tensors)
        if (!w || t.max_rel_error > w->max_rel_error) w = &t;
    return w ? w->name : "";
}

namespace {

using MatD = Mat<double>;

struct NoParams {
    template <class Self, class F>
    static void visit(Self&, const std::string&, F&&) {}
};

template <class T>
struct GradingHeadParams {
    Linear<T> primary, secondary;

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        Linear<T>::visit(self.primary, prefix + ".primary", f);
        Linear<T>::visit(self.secondary, prefix + ".secondary", f);
    }
};

template <class P>
struct Problem {
    std::string prefix;
    P params;
    MatD input;
    std::function<double(const P&, const MatD&)> loss;
    // Returns dLoss/dInput; accumulates parameter gradients into a zeroed struct.
    std::function<MatD(const P&, const MatD&, P&)> backward;
};

MatD randn(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

double weighted_sum(const MatD& r, const MatD& y) { return (r.array() * y.array()).sum(); }

std::vector<GridPoint> distinct_points(int n, int w, int h, Rng& rng) {
    std::vector<int> cells(static_cast<std::size_t>(w * h));
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = cells.size(); i > 1; --i)
        std::swap(cells[i - 1], cells[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    std::vector<GridPoint> pts;
    for (int i = 0; i < n; ++i) pts.push_back({cells[static_cast<std::size_t>(i)] % w, cells[static_cast<std::size_t>(i)] / w});
    return pts;
}

constexpr std::size_t kSamplesPerTensor = 24;

template <class P>
void check(Problem<P>& pb, double eps, Rng& rng, const GradMutator& mutate, std::map<std::string, TensorError>& acc,
           std::vector<std::string>& order) {
    P grad = zeros_like(pb.params);
    MatD dinput = pb.backward(pb.params, pb.input, grad);
    std::vector<std::pair<std::string, MatD*>> values, grads;
    P::visit(pb.params, pb.prefix, [&](const std::string& n, MatD& m) { values.emplace_back(n, &m); });
    P::visit(grad, pb.prefix, [&](const std::string& n, MatD& m) { grads.emplace_back(n, &m); });
    values.emplace_back("input", &pb.input);
    grads.emplace_back("input", &dinput);
    if (mutate)
        for (auto& [n, g] : grads) mutate(n, *g);

    for (std::size_t t = 0; t < values.size(); ++t) {
        auto& [name, val] = values[t];
        const MatD& g = *grads[t].second;
        auto& rec = acc[name];
        if (rec.name.empty()) {
            rec.name = name;
            order.push_back(name);
        }
        std::vector<Eigen::Index> idx;
        if (static_cast<std::size_t>(val->size()) <= kSamplesPerTensor) {
            idx.resize(static_cast<std::size_t>(val->size()));
            std::iota(idx.begin(), idx.end(), 0);
        } else {
            for (std::size_t s = 0; s < kSamplesPerTensor; ++s) idx.push_back(rng.uniform_int(0, val->size() - 1));
        }
        for (auto i : idx) {
            double& v = val->data()[i];
            const double saved = v;
            v = saved + eps;
            const double fp = pb.loss(pb.params, pb.input);
            v = saved - eps;
            const double fm = pb.loss(pb.params, pb.input);
            v = saved;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = g.data()[i];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            rec.max_rel_error = std::max(rec.max_rel_error, std::fabs(analytic - numeric) / denom);
            ++rec.checked;
        }
    }
}

// --- problem builders -----------------------------------------------------------------------

Problem<Linear<double>> linear_problem(Rng& rng) {
    const int in = static_cast<int>(rng.uniform_int(2, 6)), out = static_cast<int>(rng.uniform_int(1, 5));
    const int n = static_cast<int>(rng.uniform_int(1, 6));
    Problem<Linear<double>> pb;
    pb.prefix = "linear";
    pb.params = make_linear<double>(in, out, true, rng);
    pb.input = randn(n, in, rng);
    const MatD r = randn(n, out, rng);
    pb.loss = [r](const auto& p, const MatD& x) { return weighted_sum(r, linear_forward(p, x)); };
    pb.backward = [r](const auto& p, const MatD& x, auto& g) { return linear_backward(p, x, r, g); };
    return pb;
}

Problem<LayerNorm<double>> layer_norm_problem(Rng& rng) {
    const int z = static_cast<int>(rng.uniform_int(3, 8)), n = static_cast<int>(rng.uniform_int(1, 6));
    Problem<LayerNorm<double>> pb;
    pb.prefix = "layernorm";
    pb.params = make_layer_norm<double>(z);
    pb.params.gain = MatD::Ones(1, z) + randn(1, z, rng, 0.3);
    pb.params.bias = randn(1, z, rng, 0.3);
    pb.input = randn(n, z, rng);
    const MatD r = randn(n, z, rng);
    pb.loss = [r](const auto& p, const MatD& x) { return weighted_sum(r, layer_norm_forward(p, x, static_cast<LayerNormCache<double>*>(nullptr))); };
    pb.backward = [r](const auto& p, const MatD& x, auto& g) {
        LayerNormCache<double> c;
        layer_norm_forward(p, x, &c);
        return layer_norm_backward(p, c, r, g);
    };
    return pb;
}

Problem<Mlp<double>> mlp_problem(Rng& rng) {
    const int z = static_cast<int>(rng.uniform_int(2, 6)), h = static_cast<int>(rng.uniform_int(2, 8));
    const int n = static_cast<int>(rng.uniform_int(1, 5));
    Problem<Mlp<double>> pb;
    pb.prefix = "mlp";
    pb.params = make_mlp<double>(z, h, rng);
    pb.input = randn(n, z, rng);
    const MatD r = randn(n, z, rng);
    pb.loss = [r](const auto& p, const MatD& x) { return weighted_sum(r, mlp_forward(p, x, static_cast<MlpCache<double>*>(nullptr))); };
    pb.backward = [r](const auto& p, const MatD& x, auto& g) {
        MlpCache<double> c;
        mlp_forward(p, x, &c);
        return mlp_backward(p, c, r, g);
    };
    return pb;
}

Problem<EsaParams<double>> esa_problem(Rng& rng) {
    const int k = 3, z = static_cast<int>(rng.uniform_int(2, 6)), c = static_cast<int>(rng.uniform_int(2, 5));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(k * k));
    for (auto& m : mask) m = rng.bernoulli(0.6) ? 1 : 0;
    mask[static_cast<std::size_t>(k * k / 2)] = 1;
    Problem<EsaParams<double>> pb;
    pb.prefix = "esa";
    pb.params = make_esa<double>(z, c, rng);
    pb.input = randn(k * k, z, rng);
    for (int s = 0; s < k * k; ++s)
        if (!mask[static_cast<std::size_t>(s)]) pb.input.row(s).setZero();
    const MatD r = randn(k * k, z, rng);
    pb.loss = [r, mask](const auto& p, const MatD& x) { return weighted_sum(r, esa_forward(x, mask, p)); };
    pb.backward = [r, mask](const auto& p, const MatD& x, auto& g) {
        EsaTrace<double> t;
        esa_forward(x, mask, p, &t);
        return esa_backward(p, t, r, g);
    };
    return pb;
}

Problem<SscSaParams<double>> sscsa_problem(Rng& rng) {
    const int w = 6, n = static_cast<int>(rng.uniform_int(3, 18));
    const int z = static_cast<int>(rng.uniform_int(2, 5)), c = static_cast<int>(rng.uniform_int(2, 4));
    const int out = static_cast<int>(rng.uniform_int(2, 6));
    const auto rf = std::make_shared<ReceptiveFieldIndex>(build_receptive_fields(distinct_points(n, w, w, rng), 3));
    Problem<SscSaParams<double>> pb;
    pb.prefix = "sscsa";
    pb.params = make_ssc_sa<double>(z, c, out, 3, rng);
    pb.input = randn(n, z, rng);
    const MatD r = randn(n, out, rng);
    pb.loss = [r, rf](const auto& p, const MatD& x) { return weighted_sum(r, ssc_sa_forward(x, *rf, p, static_cast<SscSaCache<double>*>(nullptr))); };
    pb.backward = [r, rf](const auto& p, const MatD& x, auto& g) {
        SscSaCache<double> cache;
        ssc_sa_forward(x, *rf, p, &cache);
        return ssc_sa_backward(*rf, p, cache, r, g);
    };
    return pb;
}

Problem<NoParams> ssp_problem(Rng& rng, PoolMode mode) {
    const int w = 8, n = static_cast<int>(rng.uniform_int(2, 30)), z = static_cast<int>(rng.uniform_int(1, 4));
    const int s = static_cast<int>(rng.uniform_int(2, 3));
    const auto part = std::make_shared<CellPartition>(partition_cells(distinct_points(n, w, w, rng), s, s));
    Problem<NoParams> pb;
    pb.prefix = mode == PoolMode::Max ? "ssp_max" : "ssp_avg";
    pb.input = randn(n, z, rng);
    const MatD r = randn(static_cast<Eigen::Index>(part->cells.size()), z, rng);
    pb.loss = [r, part, mode](const NoParams&, const MatD& x) { return weighted_sum(r, ssp_forward<double>(x, *part, mode, nullptr)); };
    pb.backward = [r, part, mode](const NoParams&, const MatD& x, NoParams&) {
        SspCache<double> c;
        ssp_forward(x, *part, mode, &c);
        return ssp_backward(*part, mode, c, r);
    };
    return pb;
}

Problem<MhaParams<double>> mha_problem(Rng& rng) {
    const int heads = static_cast<int>(rng.uniform_int(1, 3));
    const int z = heads * static_cast<int>(rng.uniform_int(1, 3)), n = static_cast<int>(rng.uniform_int(1, 7));
    Problem<MhaParams<double>> pb;
    pb.prefix = "mha";
    pb.params = make_mha<double>(z, heads, rng);
    pb.input = randn(n, z, rng);
    const MatD r = randn(n, z, rng);
    pb.loss = [r](const auto& p, const MatD& x) { return weighted_sum(r, mha_forward(x, p, static_cast<MhaCache<double>*>(nullptr))); };
    pb.backward = [r](const auto& p, const MatD& x, auto& g) {
        MhaCache<double> c;
        mha_forward(x, p, &c);
        return mha_backward(p, c, r, g);
    };
    return pb;
}

ClassWeights random_weights(Rng& rng) { return {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)}; }

DetectionLabel random_label(Rng& rng) { return rng.bernoulli(0.5) ? DetectionLabel::Carcinoma : DetectionLabel::Benign; }

// Weighted BCE on sigmoid(logit), differentiated through the probability.
double bce_from_logit(double logit, DetectionLabel y, const ClassWeights& w) { return loss_detection(sigmoid(logit), y, w); }
double bce_logit_grad(double logit, DetectionLabel y, const ClassWeights& w) {
    const double p = sigmoid(logit);
    return loss_detection_grad(p, y, w) * p * (1 - p);
}

Problem<Linear<double>> detection_head_problem(Rng& rng) {
    const int z = static_cast<int>(rng.uniform_int(2, 8));
    const auto y = random_label(rng);
    const auto w = random_weights(rng);
    Problem<Linear<double>> pb;
    pb.prefix = "head.detect";
    pb.params = make_linear<double>(z, 1, true, rng);
    pb.input = randn(1, z, rng);
    pb.loss = [y, w](const auto& p, const MatD& x) { return bce_from_logit(linear_forward(p, x)(0, 0), y, w); };
    pb.backward = [y, w](const auto& p, const MatD& x, auto& g) {
        MatD dl(1, 1);
        dl(0, 0) = bce_logit_grad(linear_forward(p, x)(0, 0), y, w);
        return linear_backward(p, x, dl, g);
    };
    return pb;
}

std::array<double, 4> to_array(const MatD& row) { return {row(0, 0), row(0, 1), row(0, 2), row(0, 3)}; }

MatD softmax_of(MatD m) {
    softmax_rows(m);
    return m;
}

MatD ce_logit_grad(const MatD& probs, Pattern target) {
    MatD d = probs;
    d(0, pattern_class(target)) -= 1.0;
    return d;
}

GradingLabel random_grading(Rng& rng) {
    const auto pick = [&] { return pattern_from_class(static_cast<int>(rng.uniform_int(1, 3))); };
    if (rng.bernoulli(0.25)) return {};
    return {pick(), pick()};
}

double grading_loss_of(const MatD& pl, const MatD& sl, const GradingLabel& y) {
    return loss_grading(to_array(softmax_of(pl)), to_array(softmax_of(sl)), y);
}

Problem<GradingHeadParams<double>> grading_head_problem(Rng& rng) {
    const int z = static_cast<int>(rng.uniform_int(2, 8));
    const auto y = random_grading(rng);
    Problem<GradingHeadParams<double>> pb;
    pb.prefix = "head";
    pb.params.primary = make_linear<double>(z, 4, true, rng);
    pb.params.secondary = make_linear<double>(z, 4, true, rng);
    pb.input = randn(1, z, rng);
    pb.loss = [y](const auto& p, const MatD& x) {
        return grading_loss_of(linear_forward(p.primary, x), linear_forward(p.secondary, x), y);
    };
    pb.backward = [y](const auto& p, const MatD& x, auto& g) {
        const MatD dp = ce_logit_grad(softmax_of(linear_forward(p.primary, x)), y.primary);
        const MatD ds = ce_logit_grad(softmax_of(linear_forward(p.secondary, x)), y.secondary);
        MatD dx = linear_backward(p.primary, x, dp, g.primary);
        dx += linear_backward(p.secondary, x, ds, g.secondary);
        return dx;
    };
    return pb;
}

Problem<AbmilParams<double>> abmil_problem(Rng& rng) {
    AbmilConfig cfg;
    cfg.input_dim = static_cast<int>(rng.uniform_int(2, 6));
    cfg.attention_dim = static_cast<int>(rng.uniform_int(2, 5));
    cfg.gated = rng.bernoulli(0.7);
    const int n = static_cast<int>(rng.uniform_int(1, 8));
    const auto y = random_label(rng);
    const auto w = random_weights(rng);
    Problem<AbmilParams<double>> pb;
    pb.prefix = "";
    pb.params = init_abmil<double>(cfg, rng.next_u64());
    pb.input = randn(n, cfg.input_dim, rng);
    pb.loss = [y, w](const auto& p, const MatD& x) {
        return bce_from_logit(abmil_forward(p, x, static_cast<AbmilTrace<double>*>(nullptr)).logit, y, w);
    };
    pb.backward = [y, w](const auto& p, const MatD& x, auto& g) {
        AbmilTrace<double> t;
        const auto out = abmil_forward(p, x, &t);
        return abmil_backward(p, t, bce_logit_grad(out.logit, y, w), g);
    };
    return pb;
}

StageConfig small_stage(Rng& rng) {
    StageConfig s;
    s.heads = static_cast<int>(rng.uniform_int(1, 2));
    // Layer norm over two channels is pinned to +-1 and passes almost no gradient.
    s.width = s.heads * static_cast<int>(s.heads == 1 ? rng.uniform_int(4, 6) : rng.uniform_int(2, 3));
    s.embed = static_cast<int>(rng.uniform_int(2, 4));
    s.kernel = 3;
    s.pool = s.stride = static_cast<int>(rng.uniform_int(2, 3));
    s.pool_mode = rng.bernoulli(0.5) ? PoolMode::Max : PoolMode::Avg;
    s.hidden = static_cast<int>(rng.uniform_int(2, 8));
    return s;
}

void randomize_norms(SctBlockParams<double>& p, Rng& rng) {
    for (auto* ln : {&p.norm1, &p.norm2, &p.norm3}) {
        ln->gain = MatD::Ones(1, ln->gain.cols()) + randn(1, ln->gain.cols(), rng, 0.3);
        ln->bias = randn(1, ln->bias.cols(), rng, 0.3);
    }
}

Problem<SctBlockParams<double>> sct_block_problem(Rng& rng) {
    const int d_in = static_cast<int>(rng.uniform_int(2, 5)), n = static_cast<int>(rng.uniform_int(3, 24));
    const auto cfg = small_stage(rng);
    auto geo = std::make_shared<StageGeometry>();
    geo->coords_in = distinct_points(n, 7, 7, rng);
    geo->fields = build_receptive_fields(geo->coords_in, cfg.kernel);
    geo->cells = partition_cells(geo->coords_in, cfg.pool, cfg.stride);
    Problem<SctBlockParams<double>> pb;
    pb.prefix = "stage";
    pb.params = init_sct_block<double>(d_in, cfg, rng);
    randomize_norms(pb.params, rng);
    pb.input = randn(n, d_in, rng);
    const MatD r = randn(static_cast<Eigen::Index>(geo->cells.cells.size()), cfg.width, rng);
    pb.loss = [r, geo](const auto& p, const MatD& x) { return weighted_sum(r, sct_stage_forward(p, *geo, x, static_cast<StageTrace<double>*>(nullptr))); };
    pb.backward = [r, geo](const auto& p, const MatD& x, auto& g) {
        StageTrace<double> t;
        sct_stage_forward(p, *geo, x, &t);
        return sct_stage_backward(p, *geo, t, r, g);
    };
    return pb;
}

Block random_block(int dim, Rng& rng) {
    Block b;
    b.id = "gradcheck";
    const int slides = static_cast<int>(rng.uniform_int(1, 2));
    for (int s = 1; s <= slides; ++s) {
        const int n = static_cast<int>(rng.uniform_int(4, 20));
        for (const auto& pt : distinct_points(n, 7, 6, rng)) {
            b.coords.push_back(pt);
            b.slide.push_back(static_cast<std::uint16_t>(s));
        }
    }
    b.features = randn(static_cast<Eigen::Index>(b.coords.size()), dim, rng).cast<float>();
    b.label = DetectionLabel::Benign;
    return b;
}

Problem<SctModelParams<double>> sct_model_problem(Rng& rng, HeadKind head) {
    SctConfig cfg;
    cfg.input_dim = static_cast<int>(rng.uniform_int(2, 5));
    cfg.stages = {small_stage(rng), small_stage(rng)};
    cfg.stages[0].pool = cfg.stages[0].stride = 2;
    cfg.aggregate = rng.bernoulli(0.5) ? Aggregation::Mean : Aggregation::Max;
    cfg.head = head;
    const Block block = random_block(cfg.input_dim, rng);
    auto plan = std::make_shared<BlockPlan>(make_plan(block, cfg));
    Problem<SctModelParams<double>> pb;
    pb.prefix = "";
    pb.params = init_sct<double>(cfg, rng.next_u64());
    for (auto& s : pb.params.stages) randomize_norms(s, rng);
    pb.input = ordered_features<double>(block, *plan);
    if (head == HeadKind::Detection) {
        const auto y = random_label(rng);
        const auto w = random_weights(rng);
        pb.loss = [plan, y, w](const auto& p, const MatD& x) {
            return bce_from_logit(sct_forward(p, *plan, x, static_cast<SctTrace<double>*>(nullptr)).logit, y, w);
        };
        pb.backward = [plan, y, w](const auto& p, const MatD& x, auto& g) {
            SctTrace<double> t;
            const auto out = sct_forward(p, *plan, x, &t);
            HeadGradient<double> hg;
            hg.d_logit = bce_logit_grad(out.logit, y, w);
            return sct_backward(p, *plan, t, hg, g);
        };
    } else {
        const auto y = random_grading(rng);
        pb.loss = [plan, y](const auto& p, const MatD& x) {
            const auto out = sct_forward(p, *plan, x, static_cast<SctTrace<double>*>(nullptr));
            return grading_loss_of(out.primary_logits, out.secondary_logits, y);
        };
        pb.backward = [plan, y](const auto& p, const MatD& x, auto& g) {
            SctTrace<double> t;
            const auto out = sct_forward(p, *plan, x, &t);
            HeadGradient<double> hg;
            hg.d_primary_logits = ce_logit_grad(out.primary, y.primary);
            hg.d_secondary_logits = ce_logit_grad(out.secondary, y.secondary);
            return sct_backward(p, *plan, t, hg, g);
        };
    }
    return pb;
}

}  // namespace

GradcheckReport gradcheck(GradOp op, int trials, double eps, std::uint64_t seed, const GradMutator& mutate) {
    if (trials < 1) fail(ErrorKind::Config, "gradcheck needs at least one trial");
    if (!(eps > 0)) fail(ErrorKind::Config, "gradcheck eps must be > 0");
    std::map<std::string, TensorError> acc;
    std::vector<std::string> order;
    for (int t = 0; t < trials; ++t) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(t)));
        const auto run = [&](auto pb) { check(pb, eps, rng, mutate, acc, order); };
        switch (op) {
            case GradOp::Linear: run(linear_problem(rng)); break;
            case GradOp::LayerNorm: run(layer_norm_problem(rng)); break;
            case GradOp::Mlp: run(mlp_problem(rng)); break;
            case GradOp::Esa: run(esa_problem(rng)); break;
            case GradOp::SscSa: run(sscsa_problem(rng)); break;
            case GradOp::SspMax: run(ssp_problem(rng, PoolMode::Max)); break;
            case GradOp::SspAvg: run(ssp_problem(rng, PoolMode::Avg)); break;
            case GradOp::Mha: run(mha_problem(rng)); break;
            case GradOp::DetectionHead: run(detection_head_problem(rng)); break;
            case GradOp::GradingHead: run(grading_head_problem(rng)); break;
            case GradOp::Abmil: run(abmil_problem(rng)); break;
            case GradOp::SctBlock: run(sct_block_problem(rng)); break;
            case GradOp::SctModel: run(sct_model_problem(rng, HeadKind::Detection)); break;
            case GradOp::SctModelGrading: run(sct_model_problem(rng, HeadKind::Grading)); break;
        }
    }
    GradcheckReport r;
    r.op = op;
    r.trials = trials;
    for (const auto& n : order) r.tensors.push_back(acc[n]);
    return r;
}

}  // namespace sct
