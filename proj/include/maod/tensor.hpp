#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "maod/common.hpp"

namespace maod {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major n-dimensional array of doubles. Plain value type: copies
/// are deep, moves are cheap, and no operation mutates shared state.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // CHW accessor for rank-3 tensors
    double& at3(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at3(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    void fill(double v);
    void zero() { fill(0.0); }

    Tensor& operator+=(const Tensor& o);
    Tensor& operator*=(double s);

    double sum() const;
    double max() const;

private:
    Shape shape_;
    std::vector<double> data_;
};

enum class ConvMode { Standard, Depthwise, Pointwise };

/// Shape contract for one convolution. Weight layouts:
///   standard   O x C x K x K
///   depthwise  (C*m) x 1 x K x K   (filter j reads input channel j / m)
///   pointwise  O x C x 1 x 1
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 0;  // square
    int stride = 1;
    int padding = 0;
    ConvMode mode = ConvMode::Standard;

    void validate() const;
    Shape weight_shape() const;
    int out_extent(int in_extent) const;  // floor((n + 2p - k)/s) + 1

    static ConvSpec standard(int in_c, int out_c, int k, int stride = 1, int padding = 0);
    static ConvSpec depthwise(int channels, int k, int stride = 1, int padding = 0,
                              int multiplier = 1);
    static ConvSpec pointwise(int in_c, int out_c);
};

// Parameter-count formulas for a KxK block with no bias.
std::size_t standard_conv_param_count(int in_c, int out_c, int k);
std::size_t separable_param_count(int in_c, int out_c, int k);

}  // namespace maod
