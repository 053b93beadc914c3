#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace syntaxlm {

// Activations are row-per-token.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

enum class ParamKind : std::uint8_t {
    weight,  // normal init, weight decay
    bias,    // zero init
    gain,    // one init (layer-norm scale)
    scalar,  // explicit init (alpha)
};

struct TensorSlot {
    std::string name;
    std::size_t offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    ParamKind kind = ParamKind::weight;

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows * cols); }
    bool decays() const noexcept { return kind == ParamKind::weight; }
};

// All tensors of a model live in one flat buffer in registration order; a
// gradient buffer is a store with the same layout. Mutable access bumps
// version() so forward traces can detect parameters changed underneath them.
// The buffer is allocated at Eigen's packet alignment so every tensor sits at
// the same alignment in every run, which keeps vectorized sums bit-reproducible.
class ParamStore {
public:
    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, ParamKind kind);

    std::size_t slot_count() const noexcept { return slots_.size(); }
    const TensorSlot& slot(std::size_t id) const { return slots_.at(id); }
    const std::vector<TensorSlot>& slots() const noexcept { return slots_; }
    std::optional<std::size_t> find(std::string_view name) const;
    std::size_t require(std::string_view name) const;

    MatMap tensor(std::size_t id);
    ConstMatMap tensor(std::size_t id) const;
    double& scalar(std::size_t id) { return tensor(id)(0, 0); }
    double scalar(std::size_t id) const { return tensor(id)(0, 0); }

    std::span<double> values() {
        ++version_;
        return values_;
    }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    ParamStore zeros_like() const;
    void set_zero();
    bool same_layout(const ParamStore& other) const;

    std::uint64_t version() const noexcept { return version_; }

private:
    std::vector<TensorSlot> slots_;
    std::vector<double, Eigen::aligned_allocator<double>> values_;
    std::uint64_t version_ = 0;
};

}  // namespace syntaxlm
