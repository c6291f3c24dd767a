#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace squad {

/// Raised when a bundle component violates a dimensional or value invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised on filesystem failures (missing file, unwritable directory).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kRowSumTolerance = 1e-5;

/// Class-probability outputs of K learners at E exits for N samples, stored
/// row-major as [k][e][n][c].
class PredictionTensor {
public:
    PredictionTensor() = default;
    PredictionTensor(std::size_t learners, std::size_t exits, std::size_t samples, std::size_t classes);
    PredictionTensor(std::size_t learners, std::size_t exits, std::size_t samples, std::size_t classes,
                     std::vector<float> probs);

    std::size_t learners() const { return K_; }
    std::size_t exits() const { return E_; }
    std::size_t samples() const { return N_; }
    std::size_t classes() const { return C_; }

    std::span<const float> row(std::size_t k, std::size_t e, std::size_t n) const {
        return {probs_.data() + offset(k, e, n), C_};
    }
    std::span<float> row(std::size_t k, std::size_t e, std::size_t n) {
        return {probs_.data() + offset(k, e, n), C_};
    }

    const std::vector<float>& data() const { return probs_; }

    /// Throws ValidationError on K < 2, zero dimensions, out-of-range entries,
    /// or a row whose sum is off by more than kRowSumTolerance.
    void validate() const;

    friend bool operator==(const PredictionTensor&, const PredictionTensor&) = default;

private:
    std::size_t offset(std::size_t k, std::size_t e, std::size_t n) const {
        return ((k * E_ + e) * N_ + n) * C_;
    }

    std::size_t K_ = 0;
    std::size_t E_ = 0;
    std::size_t N_ = 0;
    std::size_t C_ = 0;
    std::vector<float> probs_;
};

struct LabelVector {
    std::vector<std::uint32_t> y;

    void validate(std::size_t samples, std::size_t classes) const;
    friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

/// Incremental MACs C_{k,e} of branch k at exit stage e.
class CostModel {
public:
    CostModel() = default;
    CostModel(std::size_t learners, std::size_t exits, double fill = 0.0);
    explicit CostModel(const std::vector<std::vector<double>>& rows);
    CostModel(std::initializer_list<std::vector<double>> rows) : CostModel(std::vector<std::vector<double>>(rows)) {}

    std::size_t learners() const { return K_; }
    std::size_t exits() const { return E_; }

    double at(std::size_t k, std::size_t e) const { return costs_[k * E_ + e]; }
    double& at(std::size_t k, std::size_t e) { return costs_[k * E_ + e]; }

    void validate(std::size_t learners, std::size_t exits) const;
    friend bool operator==(const CostModel&, const CostModel&) = default;

private:
    std::size_t K_ = 0;
    std::size_t E_ = 0;
    std::vector<double> costs_;
};

struct Bundle {
    PredictionTensor probs;
    LabelVector labels;
    CostModel costs;

    /// Cross-checks all three components against each other.
    void validate() const;
    friend bool operator==(const Bundle&, const Bundle&) = default;
};

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kPredictionsFile = "predictions.bin";
inline constexpr const char* kLabelsFile = "labels.bin";
inline constexpr const char* kCostsFile = "costs.csv";

void write_bundle(const Bundle& bundle, const std::filesystem::path& dir);
inline void write_bundle(const PredictionTensor& probs, const LabelVector& labels, const CostModel& costs,
                         const std::filesystem::path& dir) {
    write_bundle(Bundle{probs, labels, costs}, dir);
}
Bundle read_bundle(const std::filesystem::path& dir);

}  // namespace squad
