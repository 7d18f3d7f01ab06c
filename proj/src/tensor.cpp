#include "maod/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace maod {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        require(d > 0, "tensor dimension must be positive, got shape " + shape_str(s));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_numel(shape_),
            strfmt("tensor data length %zu does not match shape %s", data_.size(),
                   shape_str(shape_).c_str()));
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
    require(same_shape(o), "tensor += shape mismatch: " + shape_str(shape_) + " vs " +
                               shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double Tensor::sum() const {
    double acc = 0.0;
    for (double v : data_) acc += v;
    return acc;
}

double Tensor::max() const {
    require(!data_.empty(), "max of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

void ConvSpec::validate() const {
    require(in_channels > 0 && out_channels > 0, "conv spec needs positive channel counts");
    require(kernel_size > 0 && stride > 0 && padding >= 0, "conv spec needs k>0, stride>0, pad>=0");
    switch (mode) {
        case ConvMode::Standard:
            break;
        case ConvMode::Depthwise:
            require(out_channels % in_channels == 0 && out_channels >= in_channels,
                    strfmt("depthwise conv requires out_channels = in_channels * multiplier "
                           "(multiplier >= 1), got in=%d out=%d",
                           in_channels, out_channels));
            break;
        case ConvMode::Pointwise:
            require(kernel_size == 1,
                    strfmt("pointwise conv requires kernel_size 1, got %d", kernel_size));
            break;
    }
}

Shape ConvSpec::weight_shape() const {
    switch (mode) {
        case ConvMode::Depthwise:
            return {out_channels, 1, kernel_size, kernel_size};
        case ConvMode::Pointwise:
            return {out_channels, in_channels, 1, 1};
        case ConvMode::Standard:
        default:
            return {out_channels, in_channels, kernel_size, kernel_size};
    }
}

int ConvSpec::out_extent(int in_extent) const {
    int n = in_extent + 2 * padding - kernel_size;
    require(n >= 0, strfmt("conv input extent %d + 2*pad %d smaller than kernel %d", in_extent,
                           padding, kernel_size));
    return n / stride + 1;
}

ConvSpec ConvSpec::standard(int in_c, int out_c, int k, int stride, int padding) {
    ConvSpec s{in_c, out_c, k, stride, padding, ConvMode::Standard};
    s.validate();
    return s;
}

ConvSpec ConvSpec::depthwise(int channels, int k, int stride, int padding, int multiplier) {
    ConvSpec s{channels, channels * multiplier, k, stride, padding, ConvMode::Depthwise};
    s.validate();
    return s;
}

ConvSpec ConvSpec::pointwise(int in_c, int out_c) {
    ConvSpec s{in_c, out_c, 1, 1, 0, ConvMode::Pointwise};
    s.validate();
    return s;
}

std::size_t standard_conv_param_count(int in_c, int out_c, int k) {
    return static_cast<std::size_t>(in_c) * out_c * k * k;
}

std::size_t separable_param_count(int in_c, int out_c, int k) {
    return static_cast<std::size_t>(in_c) * k * k + static_cast<std::size_t>(in_c) * out_c;
}

}  // namespace maod
