#include "appsign/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "appsign/errors.hpp"
#include "appsign/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace appsign {

void write_file_atomic(const std::string& path, const std::string& bytes) {
  fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IngestError("rename failed: " + target.string());
  }
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::string model_blob_path(const std::string& manifest_path) {
  fs::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

namespace {

void append_f32_le(std::string& out, double v) {
  float f = static_cast<float>(v);
  std::uint32_t u = 0;
  std::memcpy(&u, &f, 4);
  out.push_back(static_cast<char>(u & 0xFF));
  out.push_back(static_cast<char>((u >> 8) & 0xFF));
  out.push_back(static_cast<char>((u >> 16) & 0xFF));
  out.push_back(static_cast<char>((u >> 24) & 0xFF));
}

double read_f32_le(const unsigned char* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                    (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(p[3]) << 24);
  float f = 0.0f;
  std::memcpy(&f, &u, 4);
  return static_cast<double>(f);
}

}  // namespace

void save_model(const NetworkSpec& net, const std::string& manifest_path) {
  std::string blob;
  json layers = json::array();
  std::size_t offset = 0;

  for (const auto& l : net.layers) {
    json jl;
    jl["kind"] = to_string(l.kind);
    switch (l.kind) {
      case LayerKind::Conv2d:
        jl["out_channels"] = l.out_channels;
        jl["in_channels"] = l.in_channels;
        jl["kernel_h"] = l.kernel_h;
        jl["kernel_w"] = l.kernel_w;
        break;
      case LayerKind::Dense:
        jl["out_features"] = l.out_features;
        jl["in_features"] = l.in_features;
        break;
      case LayerKind::MaxPool2d:
        jl["window_h"] = l.window_h;
        jl["window_w"] = l.window_w;
        break;
      default:
        break;
    }
    if (l.has_params()) {
      jl["weights_offset"] = offset;
      jl["weights_count"] = l.weights.size();
      offset += l.weights.size();
      jl["bias_offset"] = offset;
      jl["bias_count"] = l.biases.size();
      offset += l.biases.size();
      for (double v : l.weights.data()) append_f32_le(blob, v);
      for (double v : l.biases) append_f32_le(blob, v);
    }
    layers.push_back(jl);
  }

  fs::path blob_file = fs::path(model_blob_path(manifest_path)).filename();
  json manifest;
  manifest["format"] = "appsign-model";
  manifest["version"] = 1;
  manifest["endianness"] = "little";
  manifest["arch"] = net.arch_name;
  manifest["classes"] = net.classes;
  manifest["input_shape"] = {net.input_shape[0], net.input_shape[1],
                             net.input_shape[2]};
  manifest["blob"] = blob_file.string();
  manifest["blob_floats"] = offset;
  manifest["layers"] = layers;

  write_file_atomic(model_blob_path(manifest_path), blob);
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

NetworkSpec load_model(const std::string& manifest_path) {
  auto manifest_bytes = read_file_bytes(manifest_path);
  json manifest;
  try {
    manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("model manifest: ") + e.what());
  }

  try {
    if (manifest.at("format") != "appsign-model") {
      throw FormatError("model manifest: wrong format tag");
    }
    if (manifest.at("version") != 1) {
      throw FormatError("model manifest: unsupported version");
    }
    if (manifest.at("endianness") != "little") {
      throw FormatError("model manifest: unsupported endianness");
    }

    NetworkSpec net;
    net.arch_name = manifest.value("arch", "");
    auto shape = manifest.at("input_shape");
    net.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(),
                       shape.at(2).get<int>()};

    struct Slot {
      std::size_t w_off, w_cnt, b_off, b_cnt;
    };
    std::vector<Slot> slots;
    for (const auto& jl : manifest.at("layers")) {
      LayerKind kind = layer_kind_from_string(jl.at("kind").get<std::string>());
      LayerSpec l;
      switch (kind) {
        case LayerKind::Conv2d:
          l = LayerSpec::conv2d(jl.at("out_channels").get<int>(),
                                jl.at("kernel_h").get<int>(),
                                jl.at("kernel_w").get<int>());
          break;
        case LayerKind::Dense:
          l = LayerSpec::dense(jl.at("out_features").get<int>());
          break;
        case LayerKind::MaxPool2d:
          l = LayerSpec::maxpool2d(jl.at("window_h").get<int>(),
                                   jl.at("window_w").get<int>());
          break;
        case LayerKind::Relu:
          l = LayerSpec::relu();
          break;
        case LayerKind::Flatten:
          l = LayerSpec::flatten();
          break;
        case LayerKind::Softmax:
          l = LayerSpec::softmax();
          break;
      }
      if (l.has_params()) {
        slots.push_back({jl.at("weights_offset").get<std::size_t>(),
                         jl.at("weights_count").get<std::size_t>(),
                         jl.at("bias_offset").get<std::size_t>(),
                         jl.at("bias_count").get<std::size_t>()});
      }
      net.layers.push_back(std::move(l));
    }

    try {
      finalize_network(net);
    } catch (const ShapeError& e) {
      throw FormatError(std::string("model manifest: ") + e.what());
    }

    auto blob_floats = manifest.at("blob_floats").get<std::size_t>();
    fs::path blob_path = fs::path(manifest_path).parent_path() /
                         manifest.at("blob").get<std::string>();
    auto blob = read_file_bytes(blob_path.string());
    if (blob.size() != blob_floats * 4) {
      throw FormatError("model blob: size does not match manifest");
    }

    // Offsets must tile the blob exactly, in order.
    std::size_t expect = 0;
    std::size_t slot_i = 0;
    for (auto& l : net.layers) {
      if (!l.has_params()) continue;
      const Slot& s = slots[slot_i++];
      if (s.w_off != expect || s.w_cnt != l.weights.size()) {
        throw FormatError("model manifest: weight offsets do not partition blob");
      }
      expect += s.w_cnt;
      if (s.b_off != expect || s.b_cnt != l.biases.size()) {
        throw FormatError("model manifest: bias offsets do not partition blob");
      }
      expect += s.b_cnt;
      for (std::size_t j = 0; j < l.weights.size(); ++j) {
        l.weights[j] = read_f32_le(&blob[(s.w_off + j) * 4]);
      }
      for (std::size_t j = 0; j < l.biases.size(); ++j) {
        l.biases[j] = read_f32_le(&blob[(s.b_off + j) * 4]);
      }
    }
    if (expect != blob_floats) {
      throw FormatError("model manifest: offsets do not cover blob");
    }
    return net;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model manifest: ") + e.what());
  }
}

Tensor decode_ppm(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  auto peek = [&]() -> int {
    return pos < bytes.size() ? bytes[pos] : -1;
  };
  auto skip_space_and_comments = [&]() {
    while (pos < bytes.size()) {
      int c = peek();
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(peek())) {
      throw FormatError("ppm: malformed header integer");
    }
    long v = 0;
    while (pos < bytes.size() && std::isdigit(peek())) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("ppm: not a P6 pixmap");
  }
  pos = 2;
  long w = read_int();
  long h = read_int();
  long maxval = read_int();
  if (w <= 0 || h <= 0) throw FormatError("ppm: non-positive dimensions");
  if (maxval != 255) throw UnsupportedFormat("ppm: only maxval 255 supported");
  if (pos >= bytes.size() || !std::isspace(peek())) {
    throw FormatError("ppm: missing separator before payload");
  }
  ++pos;  // exactly one whitespace byte before the payload

  std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() - pos < need) throw FormatError("ppm: truncated payload");

  Tensor img = Tensor::chw(3, static_cast<int>(h), static_cast<int>(w));
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, static_cast<int>(y), static_cast<int>(x)) =
            static_cast<double>(bytes[pos++]) / 255.0;
      }
    }
  }
  return img;
}

std::vector<unsigned char> encode_ppm(const Tensor& img) {
  if (!img.is_3d() || img.channels() != 3) {
    throw InvalidParam("ppm: tensor must be 3xHxW");
  }
  std::string header = "P6\n" + std::to_string(img.width()) + " " +
                       std::to_string(img.height()) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(img.height()) * img.width() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) {
    throw InvalidParam("resize: target dims must be positive");
  }
  if (!img.is_3d()) throw InvalidParam("resize: tensor must be 3-d");
  if (out_h == img.height() && out_w == img.width()) return img;

  Tensor out = Tensor::chw(img.channels(), out_h, out_w);
  double sy = static_cast<double>(img.height()) / out_h;
  double sx = static_cast<double>(img.width()) / out_w;
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(img.height() - 1));
      int y0 = static_cast<int>(fy);
      int y1 = std::min(y0 + 1, img.height() - 1);
      double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(img.width() - 1));
        int x0 = static_cast<int>(fx);
        int x1 = std::min(x0 + 1, img.width() - 1);
        double wx = fx - x0;
        double top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
        double bot = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Dataset load_dataset(const std::string& manifest_path, int target_h,
                     int target_w) {
  auto manifest = read_file_bytes(manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();

  Dataset ds;
  ds.provenance = "ingested(" + manifest_path + ")";
  std::string text(manifest.begin(), manifest.end());
  std::size_t line_no = 0;
  std::size_t start = 0;
  int max_label = -1;

  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    std::string line = text.substr(
        start, end == std::string::npos ? std::string::npos : end - start);
    start = (end == std::string::npos) ? text.size() + 1 : end + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
    if (line.empty()) continue;

    auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw IngestError("manifest line " + std::to_string(line_no) +
                        ": missing label");
    }
    std::string path = line.substr(0, comma);
    std::string label_str = line.substr(comma + 1);
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_str, &used);
      if (used != label_str.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw IngestError("manifest line " + std::to_string(line_no) +
                        ": bad label '" + label_str + "'");
    }
    if (label < 0) {
      throw IngestError("manifest line " + std::to_string(line_no) +
                        ": negative label");
    }

    fs::path img_path = base / path;
    std::vector<unsigned char> bytes;
    try {
      bytes = read_file_bytes(img_path.string());
    } catch (const IngestError&) {
      throw IngestError("cannot read image: " + img_path.string());
    }
    Tensor img;
    try {
      img = decode_ppm(bytes);
    } catch (const Error& e) {
      throw IngestError(img_path.string() + ": " + e.what());
    }
    ds.items.push_back({resize_bilinear(img, target_h, target_w), label});
    max_label = std::max(max_label, label);
  }

  if (ds.items.empty()) throw EmptyDataset("dataset manifest has no entries");
  ds.class_count = max_label + 1;
  return ds;
}

namespace {

// Glyph membership tests; (dx, dy) relative to the glyph center, r the
// glyph radius.
bool glyph_member(int glyph, double dx, double dy, double r) {
  switch (glyph) {
    case 0:  // filled circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // filled triangle, apex up
      return dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) * 0.5;
    case 2:  // two horizontal bars
      return std::fabs(dx) <= r &&
             ((dy >= -r && dy <= -r / 3.0) || (dy >= r / 3.0 && dy <= r));
    case 3:  // two vertical bars
      return std::fabs(dy) <= r &&
             ((dx >= -r && dx <= -r / 3.0) || (dx >= r / 3.0 && dx <= r));
    case 4:  // ring
      return dx * dx + dy * dy <= r * r &&
             dx * dx + dy * dy >= (0.55 * r) * (0.55 * r);
    case 5:  // plus cross
      return (std::fabs(dx) <= 0.3 * r && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= 0.3 * r && std::fabs(dx) <= r);
    case 6:  // filled square
      return std::max(std::fabs(dx), std::fabs(dy)) <= 0.8 * r;
    default:  // diagonal cross
      return (std::fabs(dx - dy) <= 0.45 * r || std::fabs(dx + dy) <= 0.45 * r) &&
             std::max(std::fabs(dx), std::fabs(dy)) <= r;
  }
}

constexpr double kPalette[6][3] = {
    {0.90, 0.15, 0.15}, {0.15, 0.85, 0.20}, {0.20, 0.35, 0.95},
    {0.95, 0.85, 0.15}, {0.85, 0.20, 0.85}, {0.15, 0.85, 0.85},
};

}  // namespace

Dataset gen_synthetic_dataset(int classes, int per_class, int size,
                              std::uint64_t seed) {
  if (classes < 2 || classes > 43) {
    throw InvalidParam("synthetic: classes must be in [2,43]");
  }
  if (per_class < 1) throw InvalidParam("synthetic: per_class must be >= 1");
  if (size < 8) throw InvalidParam("synthetic: size must be >= 8");

  Rng rng(seed);
  Dataset ds;
  ds.class_count = classes;
  ds.provenance = "synthetic(classes=" + std::to_string(classes) +
                  ",per_class=" + std::to_string(per_class) +
                  ",size=" + std::to_string(size) +
                  ",seed=" + std::to_string(seed) + ")";

  for (int c = 0; c < classes; ++c) {
    int glyph = c % 8;
    const double* color = kPalette[(c / 8) % 6];
    for (int k = 0; k < per_class; ++k) {
      double cx = size * 0.5 + rng.uniform(-0.08, 0.08) * size;
      double cy = size * 0.5 + rng.uniform(-0.08, 0.08) * size;
      double r = size * rng.uniform(0.26, 0.36);
      double brightness = rng.uniform(0.85, 1.15);

      Tensor img = Tensor::chw(3, size, size);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          bool inside = glyph_member(glyph, x - cx, y - cy, r);
          for (int ch = 0; ch < 3; ++ch) {
            double v = inside ? color[ch] * brightness : 0.15;
            v += rng.normal(0.0, 0.03);
            img.at(ch, y, x) = std::clamp(v, 0.0, 1.0);
          }
        }
      }
      ds.items.push_back({std::move(img), c});
    }
  }
  return ds;
}

}  // namespace appsign
