#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ivaloc/tensor.hpp"

namespace ivaloc {

enum class Initializer {
    Zeros,
    GlorotUniform,
    /// Orthogonal H x H blocks stacked along the rows of a 4H x H matrix.
    OrthogonalBlocks,
    /// Zeros except the forget-gate slice [H, 2H) of a 4H LSTM bias, which is 1.
    LstmForgetBias,
};

std::string initializer_name(Initializer init);

struct Parameter {
    std::string name;
    Tensor tensor;
    Initializer init = Initializer::Zeros;
};

/// Per-parameter gradient buffers aligned with a ParameterSet.
using Gradients = std::vector<std::vector<double>>;

class ParameterSet {
public:
    /// Adds a parameter initialized from `rng`. Names must be unique.
    std::size_t add(std::string name, Shape shape, Initializer init, Rng& rng);

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    const Parameter& operator[](std::size_t i) const { return params_[i]; }
    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter* find(const std::string& name) const;
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    /// Records every parameter on `tape` as a gradient-tracking view.
    std::vector<Var> bind(Tape& tape) const;
    Gradients zero_gradients() const;
    /// grads[i] += factor * d(loss)/d(bound[i]).
    void accumulate(const Tape& tape, std::span<const Var> bound, Gradients& grads, double factor) const;

    bool all_finite() const;

private:
    std::vector<Parameter> params_;
};

void initialize(Tensor& t, Initializer init, Rng& rng);

/// Binary checkpoint: magic "IVACKPT1", u32 format version, length-prefixed
/// UTF-8 header text, u64 parameter count, then per parameter a length-prefixed
/// name, u64 rank, u64 dims and little-endian IEEE-754 doubles.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string header;
    std::vector<Parameter> parameters;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& header, const ParameterSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Overwrites values of `params` from `ckpt`, matching names and shapes exactly.
void restore_parameters(ParameterSet& params, const Checkpoint& ckpt);

}  // namespace ivaloc
