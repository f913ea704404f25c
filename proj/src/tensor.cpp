#include "hivis/tensor.hpp"

#include <numeric>
#include <sstream>

namespace hivis {

Tensor::Tensor(std::vector<int64_t> shp) : shape(std::move(shp)) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) fail("Tensor: non-positive extent in " + shape_str());
        n *= e;
    }
    data.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shp, double v) {
    Tensor t(std::move(shp));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::row_vector(std::vector<double> v) {
    Tensor t;
    t.shape = {1, static_cast<int64_t>(v.size())};
    t.data = std::move(v);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

}  // namespace hivis
