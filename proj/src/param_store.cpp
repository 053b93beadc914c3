#include "syntaxlm/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace syntaxlm {

std::size_t ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols, ParamKind kind) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("tensor '" + name + "' has an empty shape");
    if (find(name)) throw std::invalid_argument("tensor '" + name + "' registered twice");
    TensorSlot slot{std::move(name), values_.size(), rows, cols, kind};
    values_.resize(values_.size() + slot.size(), 0.0);
    slots_.push_back(std::move(slot));
    ++version_;
    return slots_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
        if (slots_[i].name == name) return i;
    return std::nullopt;
}

std::size_t ParamStore::require(std::string_view name) const {
    if (auto id = find(name)) return *id;
    throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

MatMap ParamStore::tensor(std::size_t id) {
    const auto& s = slots_.at(id);
    ++version_;
    return MatMap(values_.data() + s.offset, s.rows, s.cols);
}

ConstMatMap ParamStore::tensor(std::size_t id) const {
    const auto& s = slots_.at(id);
    return ConstMatMap(values_.data() + s.offset, s.rows, s.cols);
}

ParamStore ParamStore::zeros_like() const {
    ParamStore out;
    out.slots_ = slots_;
    out.values_.assign(values_.size(), 0.0);
    return out;
}

void ParamStore::set_zero() {
    std::fill(values_.begin(), values_.end(), 0.0);
    ++version_;
}

bool ParamStore::same_layout(const ParamStore& other) const {
    if (slots_.size() != other.slots_.size() || values_.size() != other.values_.size()) return false;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        const auto& a = slots_[i];
        const auto& b = other.slots_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset) return false;
    }
    return true;
}

}  // namespace syntaxlm
