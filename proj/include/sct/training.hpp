#pragma once

#include "sct/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace sct {

enum class Task : std::uint8_t { Detection, Grading, Sensitive, Specific };
enum class ModelKind : std::uint8_t { Sct, Abmil };

std::string to_string(Task t);
std::string to_string(ModelKind k);
Task parse_task(const std::string& s);
ModelKind parse_model_kind(const std::string& s);

struct ClassWeights {
    double benign = 1;
    double carcinoma = 1;
};

// 8:1 toward carcinoma for the sensitive model, 1:8 for the specific one, 1:1 otherwise.
ClassWeights default_weights(Task task);

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::optional<ClassWeights> weights;  // unset: default_weights(task)
    Task task = Task::Detection;
    std::uint64_t seed = 1;
    int patience = 10;
    double val_fraction = 0.2;  // held out from the training data for model selection
    int threads = 1;

    ClassWeights class_weights() const { return weights ? *weights : default_weights(task); }
    void validate() const;
};

struct TrainHistory {
    std::vector<double> loss;     // mean training loss per epoch
    std::vector<double> val_auc;  // NaN when the validation split lacks a class
    std::vector<double> seconds;  // cumulative wall time at the end of each epoch
    int best_epoch = -1;
    bool stopped_early = false;
};

inline constexpr double kProbClamp = 1e-7;

// Weighted binary cross-entropy on p clamped to [1e-7, 1 - 1e-7].
double loss_detection(double p, DetectionLabel label, const ClassWeights& w);
// dL/dp; zero where the clamp is active.
double loss_detection_grad(double p, DetectionLabel label, const ClassWeights& w);

// CE(primary) + CE(secondary) over {None, 3, 4, 5}.
double loss_grading(const std::array<double, 4>& primary, const std::array<double, 4>& secondary,
                    const GradingLabel& label, DetectionLabel detection = DetectionLabel::Unknown);

struct ModelSpec {
    ModelKind kind = ModelKind::Sct;
    SctConfig sct = SctConfig::reference(64);
    AbmilConfig abmil;
};

using TrainedModel = std::variant<SctModelParams<float>, AbmilParams<float>>;

ModelKind kind_of(const TrainedModel& m);

// Carcinoma probability for detection models; 1 - P(primary = None) for grading models.
double predict_score(const TrainedModel& m, const Block& block);

struct TrainResult {
    TrainedModel model;
    TrainHistory history;
};

// Deterministic for a fixed seed, independent of cfg.threads. The held-out split is stratified by
// label; the returned parameters are those of the best validation-AUC epoch.
TrainResult train(const std::vector<Block>& data, const TrainConfig& cfg, const ModelSpec& spec);

// Same, with an explicit validation set (may be empty: then the last epoch is returned).
TrainResult train(const std::vector<Block>& train_set, const std::vector<Block>& val_set, const TrainConfig& cfg,
                  const ModelSpec& spec);

// --- finite-difference gradient checker -----------------------------------------------------

enum class GradOp : std::uint8_t {
    Linear,
    LayerNorm,
    Mlp,
    Esa,
    SscSa,
    SspMax,
    SspAvg,
    Mha,
    DetectionHead,
    GradingHead,
    Abmil,
    SctBlock,
    SctModel,
    SctModelGrading,
};

std::string to_string(GradOp op);
GradOp parse_grad_op(const std::string& s);
std::vector<GradOp> all_grad_ops();

struct TensorError {
    std::string name;
    double max_rel_error = 0;
    std::size_t checked = 0;
};

struct GradcheckReport {
    GradOp op = GradOp::Linear;
    int trials = 0;
    std::vector<TensorError> tensors;  // parameter tensors plus "input"

    double worst() const;
    std::string worst_tensor() const;
};

// Applied to each analytic gradient tensor before comparison; lets tests plant a wrong gradient.
using GradMutator = std::function<void(const std::string& name, Mat<double>& grad)>;

GradcheckReport gradcheck(GradOp op, int trials, double eps = 1e-5, std::uint64_t seed = 1,
                          const GradMutator& mutate = {});

}  // namespace sct
