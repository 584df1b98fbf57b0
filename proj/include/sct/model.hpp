#pragma once

// Sparse Convolutional Transformer: stage composition, block-level heads, and the coordinate-free
// attention-MIL baseline.

#include "sct/attention.hpp"
#include "sct/blockdata.hpp"
#include "sct/pooling.hpp"

#include <array>
#include <string>
#include <vector>

namespace sct {

enum class Aggregation : std::uint8_t { Mean = 0, Max = 1 };
enum class HeadKind : std::uint8_t { None = 0, Detection = 1, Grading = 2 };

struct StageConfig {
    int width = 64;   // Z: projection width, also the SSC-SA output width
    int embed = 64;   // C: ESA embedding width
    int kernel = 3;   // k
    int pool = 3;     // p
    int stride = 3;   // s
    PoolMode pool_mode = PoolMode::Max;
    int heads = 4;    // n_h
    int hidden = 128; // MLP hidden width
};

struct SctConfig {
    int input_dim = 64;
    std::vector<StageConfig> stages;
    Aggregation aggregate = Aggregation::Mean;
    HeadKind head = HeadKind::Detection;

    // Five stages of widths 64, 64, 128, 128, 128 with k = 3, p = s = 3, 4 heads, MLP width 128.
    static SctConfig reference(int input_dim, HeadKind head = HeadKind::Detection);

    int output_width() const { return stages.empty() ? input_dim : stages.back().width; }
    void validate() const;
};

template <class T>
struct SctBlockParams {
    StageConfig config;
    Linear<T> proj;
    LayerNorm<T> norm1;
    SscSaParams<T> sscsa;
    LayerNorm<T> norm2;
    MhaParams<T> mha;
    LayerNorm<T> norm3;
    Mlp<T> mlp;

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        Linear<T>::visit(self.proj, prefix + ".proj", f);
        LayerNorm<T>::visit(self.norm1, prefix + ".norm1", f);
        SscSaParams<T>::visit(self.sscsa, prefix + ".sscsa", f);
        LayerNorm<T>::visit(self.norm2, prefix + ".norm2", f);
        MhaParams<T>::visit(self.mha, prefix + ".mha", f);
        LayerNorm<T>::visit(self.norm3, prefix + ".norm3", f);
        Mlp<T>::visit(self.mlp, prefix + ".mlp", f);
    }
};

template <class T>
struct SctModelParams {
    SctConfig config;
    std::vector<SctBlockParams<T>> stages;
    Linear<T> detect;     // Z_final x 1, sigmoid
    Linear<T> primary;    // Z_final x 4, softmax over {None, 3, 4, 5}
    Linear<T> secondary;  // Z_final x 4

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        const std::string p = prefix.empty() ? "" : prefix + ".";
        for (std::size_t i = 0; i < self.stages.size(); ++i)
            SctBlockParams<T>::visit(self.stages[i], p + "stage" + std::to_string(i), f);
        if (self.config.head == HeadKind::Detection) Linear<T>::visit(self.detect, p + "head.detect", f);
        if (self.config.head == HeadKind::Grading) {
            Linear<T>::visit(self.primary, p + "head.primary", f);
            Linear<T>::visit(self.secondary, p + "head.secondary", f);
        }
    }
};

template <class T>
SctBlockParams<T> init_sct_block(int input_width, const StageConfig& cfg, Rng& rng);

template <class T>
SctModelParams<T> init_sct(const SctConfig& cfg, std::uint64_t seed);

// Exact number of scalar parameters.
template <class P>
std::size_t param_count(const P& params) {
    return count_scalars(params);
}

// Copy every tensor of `from` into the identically structured `to`, converting scalar type.
template <template <class> class P, class To, class From>
void copy_tensors(P<To>& to, const P<From>& from) {
    std::vector<Mat<To>*> dst;
    P<To>::visit(to, "", [&](const std::string&, Mat<To>& m) { dst.push_back(&m); });
    std::size_t i = 0;
    P<From>::visit(from, "", [&](const std::string& name, const Mat<From>& m) {
        if (i >= dst.size()) fail(ErrorKind::Schema, "tensor structure mismatch at " + name);
        *dst[i++] = m.template cast<To>();
    });
    if (i != dst.size()) fail(ErrorKind::Schema, "tensor structure mismatch: missing tensors");
}

template <class To, template <class> class P, class From>
P<To> cast_params(const P<From>& from, P<To> shape) {
    copy_tensors(shape, from);
    return shape;
}

// --- geometry plan --------------------------------------------------------------------------

struct StageGeometry {
    std::vector<GridPoint> coords_in;
    ReceptiveFieldIndex fields;
    CellPartition cells;
};

// Coordinate-only preprocessing of a block: canonical tile order (slide, y, x), cross-slide
// indexing, and the per-stage receptive fields and pooling cells. Independent of parameters.
struct BlockPlan {
    std::vector<std::int32_t> order;  // canonical position -> original tile index
    std::vector<StageGeometry> stages;
    std::vector<GridPoint> final_coords;
};

BlockPlan make_plan(const Block& block, const SctConfig& cfg);

template <class T>
Mat<T> ordered_features(const Block& block, const BlockPlan& plan);

// --- forward / backward ---------------------------------------------------------------------

template <class T>
struct StageTrace {
    Mat<T> input, projected, normed1, convolved, pooled, normed2, attended, normed3;
    LayerNormCache<T> n1, n2, n3;
    SscSaCache<T> conv;
    SspCache<T> pool;
    MhaCache<T> mha;
    MlpCache<T> mlp;
};

template <class T>
Mat<T> sct_stage_forward(const SctBlockParams<T>& p, const StageGeometry& geo, const Mat<T>& tokens, StageTrace<T>* trace);

template <class T>
Mat<T> sct_stage_backward(const SctBlockParams<T>& p, const StageGeometry& geo, const StageTrace<T>& trace,
                          const Mat<T>& dout, SctBlockParams<T>& grad);

// Standalone block evaluation on explicit coordinates: returns tokens' and coords'.
template <class T>
std::pair<Mat<T>, std::vector<GridPoint>> sct_block_forward(const Mat<T>& tokens, std::span<const GridPoint> coords,
                                                            const SctBlockParams<T>& p);

template <class T>
struct SctOutput {
    Mat<T> embedding;  // 1 x Z_final
    T logit = 0;
    T probability = 0;
    Mat<T> primary_logits, secondary_logits;  // 1 x 4
    Mat<T> primary, secondary;                // 1 x 4 distributions
};

template <class T>
struct SctTrace {
    std::vector<StageTrace<T>> stages;
    Mat<T> final_tokens;
    std::vector<Eigen::Index> agg_argmax;
};

template <class T>
struct HeadGradient {
    T d_logit = 0;
    Mat<T> d_primary_logits, d_secondary_logits;  // 1 x 4 or empty
};

template <class T>
SctOutput<T> sct_forward(const SctModelParams<T>& p, const BlockPlan& plan, const Mat<T>& features, SctTrace<T>* trace);

// Accumulates parameter gradients; returns the gradient w.r.t. the (canonically ordered) features.
template <class T>
Mat<T> sct_backward(const SctModelParams<T>& p, const BlockPlan& plan, const SctTrace<T>& trace,
                    const HeadGradient<T>& head, SctModelParams<T>& grad);

struct GradeDistributions {
    std::array<double, 4> primary{};
    std::array<double, 4> secondary{};
};

template <class T>
double model_forward_detect(const Block& block, const SctModelParams<T>& p);

template <class T>
GradeDistributions model_forward_grade(const Block& block, const SctModelParams<T>& p);

// Block-level embedding fed to the head (for export).
template <class T>
std::vector<double> sct_embedding(const Block& block, const SctModelParams<T>& p);

// --- attention MIL baseline -----------------------------------------------------------------

struct AbmilConfig {
    int input_dim = 64;
    int attention_dim = 64;
    bool gated = true;
};

// score_i = w^T (tanh(V x_i) * sigmoid(U x_i)) (gated) or w^T tanh(V x_i); weights are the softmax
// of the scores over tiles; the block representation is the weighted mean of raw embeddings.
template <class T>
struct AbmilParams {
    AbmilConfig config;
    Linear<T> attn_v;      // D x L
    Linear<T> attn_u;      // D x L (gated only)
    Linear<T> attn_w;      // L x 1, bias-free
    Linear<T> classifier;  // D x 1

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        const std::string p = prefix.empty() ? "" : prefix + ".";
        Linear<T>::visit(self.attn_v, p + "abmil.attn_v", f);
        if (self.config.gated) Linear<T>::visit(self.attn_u, p + "abmil.attn_u", f);
        Linear<T>::visit(self.attn_w, p + "abmil.attn_w", f);
        Linear<T>::visit(self.classifier, p + "abmil.classifier", f);
    }
};

template <class T>
struct AbmilTrace {
    Mat<T> input, hv, hu, gate;
    Mat<T> weights;  // N x 1
    Mat<T> pooled;   // 1 x D
};

template <class T>
struct AbmilOutput {
    T logit = 0;
    T probability = 0;
    Mat<T> weights;
    Mat<T> pooled;
};

template <class T>
AbmilParams<T> init_abmil(const AbmilConfig& cfg, std::uint64_t seed);

template <class T>
AbmilOutput<T> abmil_forward(const AbmilParams<T>& p, const Mat<T>& features, AbmilTrace<T>* trace);

template <class T>
Mat<T> abmil_backward(const AbmilParams<T>& p, const AbmilTrace<T>& trace, T d_logit, AbmilParams<T>& grad);

template <class T>
double abmil_forward(const Block& block, const AbmilParams<T>& p);

template <class T>
T sigmoid(T x) {
    return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace sct
