#ifndef DWL_NN_HPP
#define DWL_NN_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dwl/tensor.hpp"

namespace dwl {

/// Trainable array. The value buffer is the single source of truth for the
/// parameter; gradient tapes see per-step leaf copies bound through
/// ParamBinding.
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<double> value;

    std::size_t size() const { return value.size(); }
};

/// Binds parameters to leaf tensors on one tape. Each distinct Parameter is
/// bound at most once per tape so repeated forward uses share the leaf (and
/// gradients accumulate across uses).
class ParamBinding {
public:
    explicit ParamBinding(Tape& tape) : tape_(&tape) {}

    Tensor of(const Parameter& p);

    bool bound(const Parameter& p) const { return leaves_.count(&p) > 0; }

    /// Gradient accumulated in this binding's tape for `p`. Errors if p was
    /// never part of the pass or if grads are non-finite.
    std::vector<double> grad_of(const Parameter& p) const;

    Tape& tape() { return *tape_; }

private:
    Tape* tape_;
    std::unordered_map<const Parameter*, Tensor> leaves_;
};

/// Fully connected layer: y = x * W + b with W [in x out], b [out].
struct Linear {
    Parameter weight;
    Parameter bias;

    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng);

    std::size_t in_dim() const { return weight.shape[0]; }
    std::size_t out_dim() const { return weight.shape[1]; }

    Tensor forward(ParamBinding& bind, const Tensor& x) const;
};

/// Multi-layer perceptron with ReLU between layers and a configurable head.
struct Mlp {
    enum class Head { linear, sigmoid_clamped, softmax };

    std::vector<Linear> layers;
    Head head = Head::linear;
    double hidden_dropout = 0.0; // applied after each hidden ReLU in training mode

    Mlp() = default;
    Mlp(std::string name, const std::vector<std::size_t>& dims, Head head, std::mt19937_64& rng);

    /// `dropout_rng` non-null enables hidden dropout (training mode).
    Tensor forward(ParamBinding& bind, const Tensor& x, std::mt19937_64* dropout_rng = nullptr) const;

    /// Forward without a tape, for evaluation and metric extraction.
    Tensor infer(const Tensor& x) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

/// Probabilities leaving the sigmoid head stay inside [eps_p, 1-eps_p] so the
/// alignment loss can take logs directly.
inline constexpr double kProbEpsilon = 1e-7;

/// The five networks of the dynamic weighted learning setup: feature
/// generator G, domain discriminator D, and classifiers C, C1, C2 sharing one
/// architecture with independently seeded parameters.
struct DwlModel {
    std::size_t input_dim = 0;
    std::size_t feature_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t num_classes = 0;

    Mlp generator;
    Mlp discriminator;
    Mlp classifier_main;
    Mlp classifier_aux1;
    Mlp classifier_aux2;

    std::vector<Parameter*> all_parameters();
    std::vector<const Parameter*> all_parameters() const;
};

/// Deterministic for a given seed; every network draws from its own derived
/// stream, so C, C1, C2 start distinct.
DwlModel init_model(std::size_t input_dim, std::size_t feature_dim, std::size_t hidden_dim,
                    std::size_t num_classes, std::uint64_t seed,
                    double discriminator_dropout = 0.0);

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd_momentum, adam };
enum class Direction { minimize, maximize };

struct OptimizerSpec {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 2e-4;
    double momentum = 0.9;   // sgd only
    double beta1 = 0.9;      // adam
    double beta2 = 0.999;    // adam
    double epsilon = 1e-8;   // adam
    double weight_decay = 0.0;
};

/// Owns per-parameter state for one network's parameter list.
class Optimizer {
public:
    Optimizer(OptimizerSpec spec, std::vector<Parameter*> params);

    /// Applies one update from the gradients accumulated in `bind`.
    /// `maximize` negates gradients (ascent); weight decay is added after the
    /// flip, acting as a decay in both directions.
    void step(const ParamBinding& bind, Direction direction);

    const OptimizerSpec& spec() const { return spec_; }

private:
    OptimizerSpec spec_;
    std::vector<Parameter*> params_;
    std::vector<std::vector<double>> momentum_buf_; // sgd momentum or adam m
    std::vector<std::vector<double>> second_moment_; // adam v
    std::int64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: line-oriented text, exact-precision doubles, stable layout.
// ---------------------------------------------------------------------------

void save_checkpoint(const DwlModel& model, const std::string& path);
DwlModel load_checkpoint(const std::string& path);
void write_checkpoint(const DwlModel& model, std::ostream& out);
DwlModel read_checkpoint(std::istream& in);

} // namespace dwl

#endif
