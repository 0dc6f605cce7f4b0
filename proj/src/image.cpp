#include "uidsc/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "uidsc/errors.hpp"

namespace uidsc {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 0 || w < 0 || c < 0) throw ShapeError("negative image dimension");
}

std::size_t mask_area(const Mask& mask) {
    if (mask.channels != 1) throw ShapeError("mask_area: mask must have one channel");
    return static_cast<std::size_t>(
        std::count_if(mask.data.begin(), mask.data.end(), [](double v) { return v >= 0.5; }));
}

Tensor to_tensor(const Image& image) {
    Tensor t(Shape{1, image.channels, image.height, image.width});
    for (int c = 0; c < image.channels; ++c) {
        double* p = t.plane(0, c);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) p[y * image.width + x] = image.at(y, x, c);
    }
    return t;
}

Tensor to_batch(const std::vector<Image>& images) {
    std::vector<Tensor> parts;
    parts.reserve(images.size());
    for (const auto& im : images) parts.push_back(to_tensor(im));
    return stack_batch(parts);
}

Image from_tensor(const Tensor& tensor, int n) {
    Image image(tensor.h(), tensor.w(), tensor.c());
    for (int c = 0; c < tensor.c(); ++c) {
        const double* p = tensor.plane(n, c);
        for (int y = 0; y < tensor.h(); ++y)
            for (int x = 0; x < tensor.w(); ++x) image.at(y, x, c) = p[y * tensor.w() + x];
    }
    return image;
}

Image resize_canvas(const Image& image, int height, int width) {
    Image out(height, width, image.channels, 0.0);
    const int hh = std::min(height, image.height);
    const int ww = std::min(width, image.width);
    for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y, x, c);
    return out;
}

namespace {

Image from_mat(const cv::Mat& mat, int channels) {
    if (mat.empty()) throw DataError("image decode failed");
    cv::Mat converted;
    if (channels == 1) {
        if (mat.channels() == 1) {
            converted = mat;
        } else {
            cv::Mat gray;
            cv::extractChannel(mat, gray, 0);
            converted = gray;
        }
    } else {
        if (mat.channels() == 1) {
            cv::Mat planes[] = {mat, mat, mat};
            cv::merge(planes, 3, converted);
        } else if (mat.channels() == 4) {
            std::vector<cv::Mat> ch;
            cv::split(mat, ch);
            ch.resize(3);
            cv::merge(ch, converted);
        } else {
            converted = mat;
        }
    }
    if (converted.depth() != CV_8U) {
        cv::Mat tmp;
        converted.convertTo(tmp, CV_8U);
        converted = tmp;
    }
    Image image(converted.rows, converted.cols, channels);
    for (int y = 0; y < converted.rows; ++y) {
        const std::uint8_t* row = converted.ptr<std::uint8_t>(y);
        for (int x = 0; x < converted.cols; ++x) {
            if (channels == 1) {
                image.at(y, x, 0) = row[x] >= 128 ? 1.0 : 0.0;
            } else {
                // OpenCV stores BGR.
                for (int c = 0; c < 3; ++c) image.at(y, x, c) = row[x * 3 + (2 - c)] / 255.0;
            }
        }
    }
    return image;
}

cv::Mat to_mat(const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw ShapeError("PNG output supports 1 or 3 channels, got " + std::to_string(image.channels));
    }
    cv::Mat mat(image.height, image.width, image.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < image.height; ++y) {
        std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
                const auto q = static_cast<std::uint8_t>(std::lround(v * 255.0));
                if (image.channels == 1) row[x] = q;
                else row[x * 3 + (2 - c)] = q;
            }
        }
    }
    return mat;
}

}  // namespace

Image load_image(const std::filesystem::path& path, int channels) {
    if (!std::filesystem::exists(path)) throw DataError("missing image file " + path.string());
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw DataError("cannot decode image " + path.string());
    return from_mat(mat, channels);
}

void save_png(const std::filesystem::path& path, const Image& image) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), to_mat(image))) throw DataError("cannot write " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(".png", to_mat(image), bytes)) throw DataError("PNG encode failed");
    return bytes;
}

Image decode_image(const std::vector<std::uint8_t>& bytes, int channels) {
    cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    return from_mat(cv::imdecode(raw, cv::IMREAD_UNCHANGED), channels);
}

Image quantize8(const Image& image) {
    Image out = image;
    for (auto& v : out.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    return out;
}

}  // namespace uidsc
