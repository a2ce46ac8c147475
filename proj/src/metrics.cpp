#include "gsavatar/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace gsavatar {

namespace {

template <typename S>
void check_same_shape(const Image<S>& a, const Image<S>& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.pixels.rows() != b.pixels.rows()) {
        throw ConfigError(std::string(what) + ": image sizes differ");
    }
}

}  // namespace

template <typename S>
L1Result<S> l1_loss(const Image<S>& pred, const Image<S>& target) {
    check_same_shape(pred, target, "l1_loss");
    const auto diff = (pred.pixels - target.pixels).eval();
    const double count = static_cast<double>(diff.size());
    L1Result<S> out;
    out.loss = diff.template cast<double>().cwiseAbs().sum() / count;
    out.grad = Image<S>{pred.width, pred.height, RowMatX3<S>(diff.rows(), 3)};
    const S step = static_cast<S>(1.0 / count);
    out.grad.pixels = diff.unaryExpr([step](S d) { return d > S(0) ? step : (d < S(0) ? -step : S(0)); });
    return out;
}

template <typename S>
double psnr(const Image<S>& pred, const Image<S>& target) {
    check_same_shape(pred, target, "psnr");
    const double mse = (pred.pixels - target.pixels).template cast<double>().squaredNorm() /
                       static_cast<double>(pred.pixels.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <typename S>
double ssim(const Image<S>& pred, const Image<S>& target) {
    check_same_shape(pred, target, "ssim");
    constexpr int win = 11;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    Eigen::Matrix<double, win, 1> g;
    for (int i = 0; i < win; ++i) g[i] = std::exp(-0.5 * std::pow((i - win / 2) / sigma, 2));
    g /= g.sum();

    const int w = pred.width, h = pred.height;
    if (w < win || h < win) throw ConfigError("ssim: image smaller than the 11x11 window");
    const int ow = w - win + 1, oh = h - win + 1;

    // Separable filtering of x, y, x^2, y^2, xy; valid region only.
    auto filter = [&](const Eigen::MatrixXd& img) {
        Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(h, ow);
        for (int x = 0; x < ow; ++x) rows.col(x) = img.middleCols(x, win) * g;
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(oh, ow);
        for (int y = 0; y < oh; ++y) out.row(y) = g.transpose() * rows.middleRows(y, win);
        return out;
    };

    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        Eigen::MatrixXd x(h, w), y(h, w);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                x(r, c) = static_cast<double>(pred.pixels(static_cast<Index>(r) * w + c, ch));
                y(r, c) = static_cast<double>(target.pixels(static_cast<Index>(r) * w + c, ch));
            }
        }
        const Eigen::MatrixXd mx = filter(x), my = filter(y);
        const Eigen::MatrixXd sxx = filter(x.cwiseProduct(x)) - mx.cwiseProduct(mx);
        const Eigen::MatrixXd syy = filter(y.cwiseProduct(y)) - my.cwiseProduct(my);
        const Eigen::MatrixXd sxy = filter(x.cwiseProduct(y)) - mx.cwiseProduct(my);
        const Eigen::ArrayXXd num = (2.0 * mx.cwiseProduct(my).array() + c1) * (2.0 * sxy.array() + c2);
        const Eigen::ArrayXXd den = (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
        total += (num / den).mean();
    }
    return total / 3.0;
}

template L1Result<float> l1_loss(const Image<float>&, const Image<float>&);
template L1Result<double> l1_loss(const Image<double>&, const Image<double>&);
template double psnr(const Image<float>&, const Image<float>&);
template double psnr(const Image<double>&, const Image<double>&);
template double ssim(const Image<float>&, const Image<float>&);
template double ssim(const Image<double>&, const Image<double>&);

}  // namespace gsavatar
