#include "ivaloc/parameters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ivaloc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string initializer_name(Initializer init) {
    switch (init) {
        case Initializer::Zeros: return "zeros";
        case Initializer::GlorotUniform: return "glorot_uniform";
        case Initializer::OrthogonalBlocks: return "orthogonal";
        case Initializer::LstmForgetBias: return "lstm_forget_bias";
    }
    return "unknown";
}

namespace {

// Modified Gram-Schmidt on the rows of a random normal n x n block.
void orthogonal_block(std::span<double> block, std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (;;) {
        for (double& v : block) v = normal(rng);
        bool ok = true;
        for (std::size_t r = 0; r < n && ok; ++r) {
            double* row = block.data() + r * n;
            for (std::size_t p = 0; p < r; ++p) {
                const double* prev = block.data() + p * n;
                double dot = 0;
                for (std::size_t c = 0; c < n; ++c) dot += row[c] * prev[c];
                for (std::size_t c = 0; c < n; ++c) row[c] -= dot * prev[c];
            }
            double norm = 0;
            for (std::size_t c = 0; c < n; ++c) norm += row[c] * row[c];
            norm = std::sqrt(norm);
            if (norm < 1e-10) ok = false;
            else
                for (std::size_t c = 0; c < n; ++c) row[c] /= norm;
        }
        if (ok) return;
    }
}

}  // namespace

void initialize(Tensor& t, Initializer init, Rng& rng) {
    switch (init) {
        case Initializer::Zeros:
            std::fill(t.data.begin(), t.data.end(), 0.0);
            return;
        case Initializer::GlorotUniform: {
            if (t.rank() < 2) throw ConfigError("glorot init needs a matrix or conv kernel");
            const std::size_t receptive = t.rank() == 3 ? t.shape[2] : 1;
            const double fan_out = static_cast<double>(t.shape[0] * receptive);
            const double fan_in = static_cast<double>(t.shape[1] * receptive);
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> uni(-limit, limit);
            for (double& v : t.data) v = uni(rng);
            return;
        }
        case Initializer::OrthogonalBlocks: {
            if (t.rank() != 2 || t.shape[0] % t.shape[1] != 0)
                throw ConfigError("orthogonal init needs a (k*H) x H matrix");
            const std::size_t h = t.shape[1];
            for (std::size_t b = 0; b < t.shape[0] / h; ++b)
                orthogonal_block(std::span<double>(t.data).subspan(b * h * h, h * h), h, rng);
            return;
        }
        case Initializer::LstmForgetBias: {
            if (t.rank() != 1 || t.shape[0] % 4 != 0) throw ConfigError("forget-bias init needs a 4H vector");
            const std::size_t h = t.shape[0] / 4;
            std::fill(t.data.begin(), t.data.end(), 0.0);
            std::fill(t.data.begin() + static_cast<long>(h), t.data.begin() + static_cast<long>(2 * h), 1.0);
            return;
        }
    }
}

std::size_t ParameterSet::add(std::string name, Shape shape, Initializer init, Rng& rng) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    Parameter p{std::move(name), Tensor(std::move(shape)), init};
    p.tensor.requires_grad = true;
    initialize(p.tensor, init, rng);
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    auto it = std::find_if(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
    return it == params_.end() ? nullptr : &*it;
}

std::vector<Var> ParameterSet::bind(Tape& tape) const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(tape.view(p.tensor.shape, p.tensor.data, true));
    return out;
}

Gradients ParameterSet::zero_gradients() const {
    Gradients g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.tensor.size(), 0.0);
    return g;
}

void ParameterSet::accumulate(const Tape& tape, std::span<const Var> bound, Gradients& grads, double factor) const {
    if (bound.size() != params_.size() || grads.size() != params_.size())
        throw ContractError("accumulate: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto g = tape.grad(bound[i]);
        auto& dst = grads[i];
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] += factor * g[k];
    }
}

bool ParameterSet::all_finite() const {
    for (const auto& p : params_)
        for (double v : p.tensor.data)
            if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'I', 'V', 'A', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: unexpected end of file");
    return v;
}

std::string get_string(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    if (n > (1u << 26)) throw DataError("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("checkpoint: unexpected end of file");
    return s;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& header, const ParameterSet& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    put_string(os, header);
    put<std::uint64_t>(os, params.size());
    for (const auto& p : params) {
        put_string(os, p.name);
        put<std::uint64_t>(os, p.tensor.rank());
        for (auto d : p.tensor.shape) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(p.tensor.data.data()),
                 static_cast<std::streamsize>(p.tensor.data.size() * sizeof(double)));
    }
    if (!os) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw VersionError("checkpoint: " + path.string() + " is not an ivaloc checkpoint");
    const auto version = get<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.header = get_string(is);
    const auto count = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        Parameter p;
        p.name = get_string(is);
        const auto rank = get<std::uint64_t>(is);
        if (rank > 8) throw DataError("checkpoint: implausible rank for " + p.name);
        Shape shape;
        for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(get<std::uint64_t>(is));
        std::vector<double> values(shape_size(shape));
        is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated values for " + p.name);
        p.tensor = Tensor(std::move(shape), std::move(values));
        p.tensor.requires_grad = true;
        ckpt.parameters.push_back(std::move(p));
    }
    return ckpt;
}

void restore_parameters(ParameterSet& params, const Checkpoint& ckpt) {
    if (ckpt.parameters.size() != params.size())
        throw VersionError("checkpoint: parameter count " + std::to_string(ckpt.parameters.size()) +
                           " does not match model (" + std::to_string(params.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& src = ckpt.parameters[i];
        Parameter& dst = params[i];
        if (src.name != dst.name || src.tensor.shape != dst.tensor.shape)
            throw VersionError("checkpoint: parameter " + src.name + " " + shape_string(src.tensor.shape) +
                               " does not match model parameter " + dst.name + " " +
                               shape_string(dst.tensor.shape));
        dst.tensor.data = src.tensor.data;
    }
}

}  // namespace ivaloc
