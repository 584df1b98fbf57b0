#include "sct/model.hpp"

#include <algorithm>
#include <numeric>

namespace sct {

SctConfig SctConfig::reference(int input_dim, HeadKind head) {
    SctConfig cfg;
    cfg.input_dim = input_dim;
    cfg.head = head;
    for (int width : {64, 64, 128, 128, 128}) {
        StageConfig s;
        s.width = width;
        s.embed = width;
        cfg.stages.push_back(s);
    }
    return cfg;
}

void SctConfig::validate() const {
    if (input_dim < 1) fail(ErrorKind::Config, "model input dimension must be >= 1");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        const std::string where = "stage " + std::to_string(i) + ": ";
        if (s.width < 1 || s.embed < 1 || s.hidden < 1) fail(ErrorKind::Config, where + "widths must be >= 1");
        if (s.kernel < 1 || s.kernel % 2 == 0) fail(ErrorKind::Config, where + "kernel size must be odd");
        if (s.heads < 1 || s.width % s.heads != 0) fail(ErrorKind::Config, where + "heads must divide width");
        if (s.stride < 1) fail(ErrorKind::Config, where + "stride must be >= 1");
        if (s.pool != s.stride) fail(ErrorKind::Unsupported, where + "pool size must equal stride");
    }
}

template <class T>
SctBlockParams<T> init_sct_block(int input_width, const StageConfig& cfg, Rng& rng) {
    SctBlockParams<T> b;
    b.config = cfg;
    b.proj = make_linear<T>(input_width, cfg.width, true, rng);
    b.norm1 = make_layer_norm<T>(cfg.width);
    b.sscsa = make_ssc_sa<T>(cfg.width, cfg.embed, cfg.width, cfg.kernel, rng);
    b.norm2 = make_layer_norm<T>(cfg.width);
    b.mha = make_mha<T>(cfg.width, cfg.heads, rng);
    b.norm3 = make_layer_norm<T>(cfg.width);
    b.mlp = make_mlp<T>(cfg.width, cfg.hidden, rng);
    return b;
}

template <class T>
SctModelParams<T> init_sct(const SctConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    SctModelParams<T> p;
    p.config = cfg;
    int width = cfg.input_dim;
    for (const auto& s : cfg.stages) {
        p.stages.push_back(init_sct_block<T>(width, s, rng));
        width = s.width;
    }
    if (cfg.head == HeadKind::Detection) p.detect = make_linear<T>(width, 1, true, rng);
    if (cfg.head == HeadKind::Grading) {
        p.primary = make_linear<T>(width, 4, true, rng);
        p.secondary = make_linear<T>(width, 4, true, rng);
    }
    return p;
}

BlockPlan make_plan(const Block& block, const SctConfig& cfg) {
    if (block.size() == 0) fail(ErrorKind::Input, "block '" + block.id + "' has no tiles");
    const Block norm = normalize_coords(block);
    BlockPlan plan;
    plan.order.resize(norm.size());
    std::iota(plan.order.begin(), plan.order.end(), 0);
    std::sort(plan.order.begin(), plan.order.end(), [&](std::int32_t a, std::int32_t b) {
        if (norm.slide[a] != norm.slide[b]) return norm.slide[a] < norm.slide[b];
        if (norm.coords[a].y != norm.coords[b].y) return norm.coords[a].y < norm.coords[b].y;
        return norm.coords[a].x < norm.coords[b].x;
    });
    std::vector<GridPoint> coords(norm.size());
    std::vector<std::uint16_t> slide(norm.size());
    for (std::size_t i = 0; i < plan.order.size(); ++i) {
        coords[i] = norm.coords[plan.order[i]];
        slide[i] = norm.slide[plan.order[i]];
    }
    coords = index_tiles(coords, slide).coords;
    for (const auto& s : cfg.stages) {
        StageGeometry g;
        g.coords_in = coords;
        g.fields = build_receptive_fields(coords, s.kernel);
        g.cells = partition_cells(coords, s.pool, s.stride);
        coords = g.cells.cell_coords();
        plan.stages.push_back(std::move(g));
    }
    plan.final_coords = std::move(coords);
    return plan;
}

template <class T>
Mat<T> ordered_features(const Block& block, const BlockPlan& plan) {
    Mat<T> x(static_cast<Eigen::Index>(plan.order.size()), block.features.cols());
    for (std::size_t i = 0; i < plan.order.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = block.features.row(plan.order[i]).template cast<T>();
    return x;
}

template <class T>
Mat<T> sct_stage_forward(const SctBlockParams<T>& p, const StageGeometry& geo, const Mat<T>& x, StageTrace<T>* t) {
    if (x.cols() != p.proj.in())
        fail(ErrorKind::Config, "stage input width " + std::to_string(x.cols()) + " does not match projection " +
                                    std::to_string(p.proj.in()));
    Mat<T> projected = linear_forward(p.proj, x);
    Mat<T> normed1 = layer_norm_forward(p.norm1, projected, t ? &t->n1 : nullptr);
    Mat<T> convolved = ssc_sa_forward(normed1, geo.fields, p.sscsa, t ? &t->conv : nullptr);
    Mat<T> pooled = ssp_forward(convolved, geo.cells, p.config.pool_mode, t ? &t->pool : nullptr);
    Mat<T> normed2 = layer_norm_forward(p.norm2, pooled, t ? &t->n2 : nullptr);
    Mat<T> attended = mha_forward(normed2, p.mha, t ? &t->mha : nullptr);
    Mat<T> normed3 = layer_norm_forward(p.norm3, attended, t ? &t->n3 : nullptr);
    Mat<T> out = mlp_forward(p.mlp, normed3, t ? &t->mlp : nullptr);
    if (t) {
        t->input = x;
        t->projected = std::move(projected);
        t->normed1 = std::move(normed1);
        t->convolved = std::move(convolved);
        t->pooled = std::move(pooled);
        t->normed2 = std::move(normed2);
        t->attended = std::move(attended);
        t->normed3 = std::move(normed3);
    }
    return out;
}

template <class T>
Mat<T> sct_stage_backward(const SctBlockParams<T>& p, const StageGeometry& geo, const StageTrace<T>& t,
                          const Mat<T>& dout, SctBlockParams<T>& g) {
    Mat<T> d = mlp_backward(p.mlp, t.mlp, dout, g.mlp);
    d = layer_norm_backward(p.norm3, t.n3, d, g.norm3);
    d = mha_backward(p.mha, t.mha, d, g.mha);
    d = layer_norm_backward(p.norm2, t.n2, d, g.norm2);
    d = ssp_backward(geo.cells, p.config.pool_mode, t.pool, d);
    d = ssc_sa_backward(geo.fields, p.sscsa, t.conv, d, g.sscsa);
    d = layer_norm_backward(p.norm1, t.n1, d, g.norm1);
    return linear_backward(p.proj, t.input, d, g.proj);
}

template <class T>
std::pair<Mat<T>, std::vector<GridPoint>> sct_block_forward(const Mat<T>& tokens, std::span<const GridPoint> coords,
                                                            const SctBlockParams<T>& p) {
    if (static_cast<std::size_t>(tokens.rows()) != coords.size())
        fail(ErrorKind::Input, "block forward: token and coordinate counts differ");
    StageGeometry geo;
    geo.coords_in.assign(coords.begin(), coords.end());
    geo.fields = build_receptive_fields(coords, p.config.kernel);
    geo.cells = partition_cells(coords, p.config.pool, p.config.stride);
    Mat<T> out = sct_stage_forward(p, geo, tokens, static_cast<StageTrace<T>*>(nullptr));
    return {std::move(out), geo.cells.cell_coords()};
}

namespace {

template <class T>
Mat<T> softmax_row(const Mat<T>& logits) {
    Mat<T> p = logits;
    softmax_rows(p);
    return p;
}

}  // namespace

template <class T>
SctOutput<T> sct_forward(const SctModelParams<T>& p, const BlockPlan& plan, const Mat<T>& features, SctTrace<T>* trace) {
    if (features.rows() == 0) fail(ErrorKind::Input, "empty block");
    if (plan.stages.size() != p.stages.size()) fail(ErrorKind::Config, "plan built for a different stage count");
    if (features.cols() != p.config.input_dim)
        fail(ErrorKind::Config, "feature dimension " + std::to_string(features.cols()) + " does not match model input " +
                                    std::to_string(p.config.input_dim));
    Mat<T> x = features;
    if (trace) trace->stages.resize(p.stages.size());
    for (std::size_t s = 0; s < p.stages.size(); ++s)
        x = sct_stage_forward(p.stages[s], plan.stages[s], x, trace ? &trace->stages[s] : nullptr);

    SctOutput<T> out;
    if (p.config.aggregate == Aggregation::Mean) {
        out.embedding = x.colwise().mean();
    } else {
        out.embedding.resize(1, x.cols());
        std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()), 0);
        for (Eigen::Index d = 0; d < x.cols(); ++d) out.embedding(0, d) = x.col(d).maxCoeff(&arg[d]);
        if (trace) trace->agg_argmax = std::move(arg);
    }
    if (p.config.head == HeadKind::Detection) {
        out.logit = linear_forward(p.detect, out.embedding)(0, 0);
        out.probability = sigmoid(out.logit);
    } else if (p.config.head == HeadKind::Grading) {
        out.primary_logits = linear_forward(p.primary, out.embedding);
        out.secondary_logits = linear_forward(p.secondary, out.embedding);
        out.primary = softmax_row(out.primary_logits);
        out.secondary = softmax_row(out.secondary_logits);
    }
    if (trace) trace->final_tokens = std::move(x);
    return out;
}

template <class T>
Mat<T> sct_backward(const SctModelParams<T>& p, const BlockPlan& plan, const SctTrace<T>& trace,
                    const HeadGradient<T>& head, SctModelParams<T>& grad) {
    const auto& x = trace.final_tokens;
    Mat<T> embedding = p.config.aggregate == Aggregation::Mean ? Mat<T>(x.colwise().mean()) : Mat<T>(1, x.cols());
    if (p.config.aggregate == Aggregation::Max)
        for (Eigen::Index d = 0; d < x.cols(); ++d) embedding(0, d) = x(trace.agg_argmax[d], d);

    Mat<T> demb = Mat<T>::Zero(1, x.cols());
    if (p.config.head == HeadKind::Detection) {
        Mat<T> dl(1, 1);
        dl(0, 0) = head.d_logit;
        demb += linear_backward(p.detect, embedding, dl, grad.detect);
    } else if (p.config.head == HeadKind::Grading) {
        if (head.d_primary_logits.size() > 0) demb += linear_backward(p.primary, embedding, head.d_primary_logits, grad.primary);
        if (head.d_secondary_logits.size() > 0)
            demb += linear_backward(p.secondary, embedding, head.d_secondary_logits, grad.secondary);
    }

    Mat<T> d(x.rows(), x.cols());
    if (p.config.aggregate == Aggregation::Mean) {
        d.rowwise() = demb.row(0) / static_cast<T>(x.rows());
    } else {
        d.setZero();
        for (Eigen::Index c = 0; c < x.cols(); ++c) d(trace.agg_argmax[c], c) = demb(0, c);
    }
    for (std::size_t s = p.stages.size(); s-- > 0;)
        d = sct_stage_backward(p.stages[s], plan.stages[s], trace.stages[s], d, grad.stages[s]);
    return d;
}

template <class T>
double model_forward_detect(const Block& block, const SctModelParams<T>& p) {
    if (p.config.head != HeadKind::Detection) fail(ErrorKind::Config, "model has no detection head");
    const BlockPlan plan = make_plan(block, p.config);
    return static_cast<double>(sct_forward(p, plan, ordered_features<T>(block, plan), static_cast<SctTrace<T>*>(nullptr)).probability);
}

template <class T>
GradeDistributions model_forward_grade(const Block& block, const SctModelParams<T>& p) {
    if (p.config.head != HeadKind::Grading) fail(ErrorKind::Config, "model has no grading head");
    const BlockPlan plan = make_plan(block, p.config);
    const auto out = sct_forward(p, plan, ordered_features<T>(block, plan), static_cast<SctTrace<T>*>(nullptr));
    GradeDistributions g;
    for (int c = 0; c < 4; ++c) {
        g.primary[c] = static_cast<double>(out.primary(0, c));
        g.secondary[c] = static_cast<double>(out.secondary(0, c));
    }
    return g;
}

template <class T>
std::vector<double> sct_embedding(const Block& block, const SctModelParams<T>& p) {
    const BlockPlan plan = make_plan(block, p.config);
    const auto out = sct_forward(p, plan, ordered_features<T>(block, plan), static_cast<SctTrace<T>*>(nullptr));
    std::vector<double> v(static_cast<std::size_t>(out.embedding.cols()));
    for (Eigen::Index d = 0; d < out.embedding.cols(); ++d) v[d] = static_cast<double>(out.embedding(0, d));
    return v;
}

// --- ABMIL ----------------------------------------------------------------------------------

template <class T>
AbmilParams<T> init_abmil(const AbmilConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim < 1 || cfg.attention_dim < 1) fail(ErrorKind::Config, "ABMIL dimensions must be >= 1");
    Rng rng(seed);
    AbmilParams<T> p;
    p.config = cfg;
    p.attn_v = make_linear<T>(cfg.input_dim, cfg.attention_dim, true, rng);
    if (cfg.gated) p.attn_u = make_linear<T>(cfg.input_dim, cfg.attention_dim, true, rng);
    p.attn_w = make_linear<T>(cfg.attention_dim, 1, false, rng);
    p.classifier = make_linear<T>(cfg.input_dim, 1, true, rng);
    return p;
}

template <class T>
AbmilOutput<T> abmil_forward(const AbmilParams<T>& p, const Mat<T>& x, AbmilTrace<T>* trace) {
    if (x.rows() == 0) fail(ErrorKind::Input, "empty block");
    if (x.cols() != p.config.input_dim) fail(ErrorKind::Config, "ABMIL: feature dimension does not match model");
    Mat<T> hv = linear_forward(p.attn_v, x).array().tanh().matrix();
    Mat<T> hu, gate;
    if (p.config.gated) {
        hu = linear_forward(p.attn_u, x).unaryExpr([](T v) { return sigmoid(v); });
        gate = (hv.array() * hu.array()).matrix();
    } else {
        gate = hv;
    }
    Mat<T> scores = linear_forward(p.attn_w, gate);  // N x 1
    Mat<T> weights = scores.transpose();
    softmax_rows(weights);
    weights.transposeInPlace();
    AbmilOutput<T> out;
    out.pooled = weights.transpose() * x;
    out.logit = linear_forward(p.classifier, out.pooled)(0, 0);
    out.probability = sigmoid(out.logit);
    out.weights = weights;
    if (trace) {
        trace->input = x;
        trace->hv = std::move(hv);
        trace->hu = std::move(hu);
        trace->gate = std::move(gate);
        trace->weights = std::move(weights);
        trace->pooled = out.pooled;
    }
    return out;
}

template <class T>
Mat<T> abmil_backward(const AbmilParams<T>& p, const AbmilTrace<T>& t, T d_logit, AbmilParams<T>& g) {
    Mat<T> dl(1, 1);
    dl(0, 0) = d_logit;
    const Mat<T> dpooled = linear_backward(p.classifier, t.pooled, dl, g.classifier);  // 1 x D
    Mat<T> dx = t.weights * dpooled;                                                   // N x D
    // weights = softmax(scores): d scores = w * (dw - w . dw)
    const Mat<T> dweights = t.input * dpooled.transpose();  // N x 1
    const T dot = (t.weights.array() * dweights.array()).sum();
    const Mat<T> dscores = (t.weights.array() * (dweights.array() - dot)).matrix();
    const Mat<T> dgate = linear_backward(p.attn_w, t.gate, dscores, g.attn_w);
    Mat<T> dhv = dgate;
    if (p.config.gated) {
        dhv = (dgate.array() * t.hu.array()).matrix();
        const Mat<T> dhu_pre = (dgate.array() * t.hv.array() * t.hu.array() * (T(1) - t.hu.array())).matrix();
        dx += linear_backward(p.attn_u, t.input, dhu_pre, g.attn_u);
    }
    const Mat<T> dhv_pre = (dhv.array() * (T(1) - t.hv.array().square())).matrix();
    dx += linear_backward(p.attn_v, t.input, dhv_pre, g.attn_v);
    return dx;
}

template <class T>
double abmil_forward(const Block& block, const AbmilParams<T>& p) {
    if (block.size() == 0) fail(ErrorKind::Input, "block '" + block.id + "' has no tiles");
    return static_cast<double>(abmil_forward(p, Mat<T>(block.features.template cast<T>()), static_cast<AbmilTrace<T>*>(nullptr)).probability);
}

#define SCT_INSTANTIATE_MODEL(T)                                                                                   \
    template SctBlockParams<T> init_sct_block<T>(int, const StageConfig&, Rng&);                                  \
    template SctModelParams<T> init_sct<T>(const SctConfig&, std::uint64_t);                                      \
    template Mat<T> ordered_features<T>(const Block&, const BlockPlan&);                                          \
    template Mat<T> sct_stage_forward<T>(const SctBlockParams<T>&, const StageGeometry&, const Mat<T>&,           \
                                         StageTrace<T>*);                                                         \
    template Mat<T> sct_stage_backward<T>(const SctBlockParams<T>&, const StageGeometry&, const StageTrace<T>&,    \
                                          const Mat<T>&, SctBlockParams<T>&);                                     \
    template std::pair<Mat<T>, std::vector<GridPoint>> sct_block_forward<T>(const Mat<T>&, std::span<const GridPoint>, \
                                                                            const SctBlockParams<T>&);             \
    template SctOutput<T> sct_forward<T>(const SctModelParams<T>&, const BlockPlan&, const Mat<T>&, SctTrace<T>*); \
    template Mat<T> sct_backward<T>(const SctModelParams<T>&, const BlockPlan&, const SctTrace<T>&,               \
                                    const HeadGradient<T>&, SctModelParams<T>&);                                  \
    template double model_forward_detect<T>(const Block&, const SctModelParams<T>&);                              \
    template GradeDistributions model_forward_grade<T>(const Block&, const SctModelParams<T>&);                   \
    template std::vector<double> sct_embedding<T>(const Block&, const SctModelParams<T>&);                        \
    template AbmilParams<T> init_abmil<T>(const AbmilConfig&, std::uint64_t);                                     \
    template AbmilOutput<T> abmil_forward<T>(const AbmilParams<T>&, const Mat<T>&, AbmilTrace<T>*);               \
    template Mat<T> abmil_backward<T>(const AbmilParams<T>&, const AbmilTrace<T>&, T, AbmilParams<T>&);           \
    template double abmil_forward<T>(const Block&, const AbmilParams<T>&);

SCT_INSTANTIATE_MODEL(float)
SCT_INSTANTIATE_MODEL(double)

}  // namespace sct
