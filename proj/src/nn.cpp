#include "dwl/nn.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace dwl {

// ---------------------------------------------------------------------------
// ParamBinding
// ---------------------------------------------------------------------------

Tensor ParamBinding::of(const Parameter& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    Tensor leaf = tape_->leaf(p.shape, p.value);
    leaves_.emplace(&p, leaf);
    return leaf;
}

std::vector<double> ParamBinding::grad_of(const Parameter& p) const {
    auto it = leaves_.find(&p);
    if (it == leaves_.end()) {
        throw NumericError("missing gradients: parameter '" + p.name +
                           "' was not part of this pass");
    }
    auto g = it->second.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
            throw NumericError("non-finite gradient in parameter '" + p.name + "' at index " +
                               std::to_string(i));
        }
    }
    return {g.begin(), g.end()};
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Linear::Linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    if (in == 0 || out == 0) {
        throw ConfigError("linear layer '" + name + "': dimensions must be >= 1");
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    weight.name = name + ".weight";
    weight.shape = {in, out};
    weight.value.resize(in * out);
    for (auto& v : weight.value) v = dist(rng);
    bias.name = name + ".bias";
    bias.shape = {out};
    bias.value.resize(out);
    for (auto& v : bias.value) v = dist(rng);
}

Tensor Linear::forward(ParamBinding& bind, const Tensor& x) const {
    Tensor z = matmul(x, bind.of(weight));
    return add(z, repeat_rows(bind.of(bias), x.rows()));
}

Mlp::Mlp(std::string name, const std::vector<std::size_t>& dims, Head head_, std::mt19937_64& rng)
    : head(head_) {
    if (dims.size() < 2) throw ConfigError("mlp '" + name + "': need at least two dims");
    layers.reserve(dims.size() - 1);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        layers.emplace_back(name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
    }
}

namespace {

Tensor mlp_run(const Mlp& mlp, const std::function<Tensor(const Parameter&)>& materialize,
               const Tensor& x, std::mt19937_64* dropout_rng) {
    Tensor h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        const Linear& layer = mlp.layers[i];
        Tensor z = matmul(h, materialize(layer.weight));
        z = add(z, repeat_rows(materialize(layer.bias), h.rows()));
        if (i + 1 < mlp.layers.size()) {
            h = relu(z);
            if (dropout_rng && mlp.hidden_dropout > 0.0) {
                h = dropout(h, mlp.hidden_dropout, *dropout_rng);
            }
        } else {
            h = z;
        }
    }
    switch (mlp.head) {
    case Mlp::Head::linear: return h;
    case Mlp::Head::sigmoid_clamped: return clamp(sigmoid(h), kProbEpsilon, 1.0 - kProbEpsilon);
    case Mlp::Head::softmax: return softmax_rows(h);
    }
    throw Error("mlp: unknown head");
}

} // namespace

Tensor Mlp::forward(ParamBinding& bind, const Tensor& x, std::mt19937_64* dropout_rng) const {
    return mlp_run(*this, [&bind](const Parameter& p) { return bind.of(p); }, x, dropout_rng);
}

Tensor Mlp::infer(const Tensor& x) const {
    return mlp_run(*this, [](const Parameter& p) { return Tensor(p.shape, p.value); }, x, nullptr);
}

std::vector<Parameter*> Mlp::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

std::vector<Parameter*> DwlModel::all_parameters() {
    std::vector<Parameter*> out;
    for (Mlp* net : {&generator, &discriminator, &classifier_main, &classifier_aux1,
                     &classifier_aux2}) {
        auto ps = net->parameters();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

std::vector<const Parameter*> DwlModel::all_parameters() const {
    std::vector<const Parameter*> out;
    for (const Mlp* net : {&generator, &discriminator, &classifier_main, &classifier_aux1,
                           &classifier_aux2}) {
        auto ps = net->parameters();
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

DwlModel init_model(std::size_t input_dim, std::size_t feature_dim, std::size_t hidden_dim,
                    std::size_t num_classes, std::uint64_t seed, double discriminator_dropout) {
    if (input_dim < 1 || feature_dim < 1 || hidden_dim < 1 || num_classes < 1) {
        throw ConfigError("init_model: all dimensions must be >= 1");
    }
    DwlModel m;
    m.input_dim = input_dim;
    m.feature_dim = feature_dim;
    m.hidden_dim = hidden_dim;
    m.num_classes = num_classes;

    auto rng_for = [seed](std::string_view tag) { return std::mt19937_64(derive_seed(seed, tag)); };

    {
        auto rng = rng_for("generator");
        m.generator = Mlp("generator", {input_dim, hidden_dim, feature_dim}, Mlp::Head::linear, rng);
    }
    {
        auto rng = rng_for("discriminator");
        m.discriminator =
            Mlp("discriminator", {feature_dim, hidden_dim, 1}, Mlp::Head::sigmoid_clamped, rng);
        m.discriminator.hidden_dropout = discriminator_dropout;
    }
    const std::vector<std::size_t> cls_dims{feature_dim, hidden_dim, num_classes};
    {
        auto rng = rng_for("classifier-main");
        m.classifier_main = Mlp("classifier_main", cls_dims, Mlp::Head::softmax, rng);
    }
    {
        auto rng = rng_for("classifier-aux1");
        m.classifier_aux1 = Mlp("classifier_aux1", cls_dims, Mlp::Head::softmax, rng);
    }
    {
        auto rng = rng_for("classifier-aux2");
        m.classifier_aux2 = Mlp("classifier_aux2", cls_dims, Mlp::Head::softmax, rng);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerSpec spec, std::vector<Parameter*> params)
    : spec_(spec), params_(std::move(params)) {
    momentum_buf_.reserve(params_.size());
    second_moment_.reserve(params_.size());
    for (const Parameter* p : params_) {
        momentum_buf_.emplace_back(p->size(), 0.0);
        second_moment_.emplace_back(p->size(), 0.0);
    }
}

void Optimizer::step(const ParamBinding& bind, Direction direction) {
    ++step_count_;
    const double sign = direction == Direction::maximize ? -1.0 : 1.0;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        std::vector<double> g = bind.grad_of(p);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = sign * g[i] + spec_.weight_decay * p.value[i];
        }
        switch (spec_.kind) {
        case OptimizerKind::sgd_momentum: {
            auto& buf = momentum_buf_[k];
            for (std::size_t i = 0; i < g.size(); ++i) {
                buf[i] = spec_.momentum * buf[i] + g[i];
                p.value[i] -= spec_.learning_rate * buf[i];
            }
            break;
        }
        case OptimizerKind::adam: {
            auto& m = momentum_buf_[k];
            auto& v = second_moment_[k];
            const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(step_count_));
            const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(step_count_));
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = spec_.beta1 * m[i] + (1.0 - spec_.beta1) * g[i];
                v[i] = spec_.beta2 * v[i] + (1.0 - spec_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= spec_.learning_rate * mhat / (std::sqrt(vhat) + spec_.epsilon);
            }
            break;
        }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "dwl-checkpoint";
} // namespace

void write_checkpoint(const DwlModel& model, std::ostream& out) {
    out << kCheckpointMagic << " v1\n";
    out << "dims " << model.input_dim << " " << model.feature_dim << " " << model.hidden_dim
        << " " << model.num_classes << "\n";
    out << "dropout " << format_double(model.discriminator.hidden_dropout) << "\n";
    for (const Parameter* p : model.all_parameters()) {
        out << "param " << p->name << " " << p->shape.size();
        for (std::size_t d : p->shape) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            if (i) out << " ";
            out << format_double(p->value[i]);
        }
        out << "\n";
    }
    out << "end\n";
}

DwlModel read_checkpoint(std::istream& in) {
    std::string magic, version;
    if (!(in >> magic >> version) || magic != kCheckpointMagic || version != "v1") {
        throw FormatError("checkpoint: bad magic/version header");
    }
    std::string tag;
    std::size_t input_dim, feature_dim, hidden_dim, num_classes;
    if (!(in >> tag >> input_dim >> feature_dim >> hidden_dim >> num_classes) || tag != "dims") {
        throw FormatError("checkpoint: missing dims record");
    }
    double dropout_rate = 0.0;
    if (!(in >> tag >> dropout_rate) || tag != "dropout") {
        throw FormatError("checkpoint: missing dropout record");
    }
    DwlModel model = init_model(input_dim, feature_dim, hidden_dim, num_classes, /*seed=*/0,
                                dropout_rate);
    std::unordered_map<std::string, Parameter*> by_name;
    for (Parameter* p : model.all_parameters()) by_name[p->name] = p;

    std::size_t filled = 0;
    while (in >> tag) {
        if (tag == "end") {
            if (filled != by_name.size()) {
                throw FormatError("checkpoint: expected " + std::to_string(by_name.size()) +
                                  " parameters, found " + std::to_string(filled));
            }
            return model;
        }
        if (tag != "param") throw FormatError("checkpoint: unexpected record '" + tag + "'");
        std::string name;
        std::size_t rank;
        if (!(in >> name >> rank)) throw FormatError("checkpoint: truncated param header");
        Shape shape(rank);
        for (auto& d : shape) {
            if (!(in >> d)) throw FormatError("checkpoint: truncated shape for '" + name + "'");
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint: unknown parameter '" + name + "'");
        Parameter& p = *it->second;
        if (shape != p.shape) {
            throw FormatError("checkpoint: shape mismatch for '" + name + "': file has " +
                              shape_str(shape) + ", model expects " + shape_str(p.shape));
        }
        for (auto& v : p.value) {
            if (!(in >> v)) throw FormatError("checkpoint: truncated values for '" + name + "'");
            if (!std::isfinite(v)) {
                throw FormatError("checkpoint: non-finite value in '" + name + "'");
            }
        }
        ++filled;
    }
    throw FormatError("checkpoint: missing end record");
}

void save_checkpoint(const DwlModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open checkpoint file for writing: " + path);
    write_checkpoint(model, out);
    if (!out) throw Error("failed writing checkpoint: " + path);
}

DwlModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint file: " + path);
    return read_checkpoint(in);
}

} // namespace dwl
