// Lossy stand-in for an external still-image codec. Encoder and decoder share
// this file and follow the same command line as bpgenc/bpgdec:
//   quantenc -q <0..51> -o out.bin in.png
//   quantdec -o out.png in.bin
// Coarse qualities first shrink the image (2x from q 20, 4x from q 34, 8x from
// q 45), then apply YCbCr with 2x2 chroma subsampling, uniform quantization
// with step 2^((q-4)/8), left/up DPCM of the indices and zlib.

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace {

constexpr char kMagic[4] = {'Q', 'N', 'T', '1'};

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<float> data;
  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

int shrink_for(int q) { return q >= 45 ? 8 : (q >= 34 ? 4 : (q >= 20 ? 2 : 1)); }

double step_for(int q, bool chroma) { return std::pow(2.0, (q - 4) / 8.0) * (chroma ? 1.5 : 1.0); }

void put_symbol(std::vector<std::uint8_t>& out, long v) {
  const unsigned long z = v >= 0 ? 2ul * v : 2ul * (-v) - 1;
  if (z < 255) {
    out.push_back(static_cast<std::uint8_t>(z));
  } else {
    out.push_back(255);
    out.push_back(static_cast<std::uint8_t>(z & 0xff));
    out.push_back(static_cast<std::uint8_t>((z >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((z >> 16) & 0xff));
  }
}

long get_symbol(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos >= in.size()) throw std::runtime_error("truncated stream");
  unsigned long z = in[pos++];
  if (z == 255) {
    if (pos + 3 > in.size()) throw std::runtime_error("truncated stream");
    z = in[pos] | (in[pos + 1] << 8) | (static_cast<unsigned long>(in[pos + 2]) << 16);
    pos += 3;
  }
  return (z & 1) ? -static_cast<long>((z + 1) / 2) : static_cast<long>(z / 2);
}

long predict(const std::vector<long>& idx, int w, int x, int y) {
  if (x > 0) return idx[static_cast<std::size_t>(y) * w + x - 1];
  if (y > 0) return idx[static_cast<std::size_t>(y - 1) * w];
  return 0;
}

void encode_plane(const Plane& p, double step, std::vector<std::uint8_t>& out) {
  std::vector<long> idx(p.data.size());
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const long v = std::lround(p.at(x, y) / step);
      idx[static_cast<std::size_t>(y) * p.width + x] = v;
      put_symbol(out, v - predict(idx, p.width, x, y));
    }
  }
}

Plane decode_plane(int w, int h, double step, const std::vector<std::uint8_t>& in, std::size_t& pos) {
  Plane p{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
  std::vector<long> idx(p.data.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const long v = get_symbol(in, pos) + predict(idx, w, x, y);
      idx[static_cast<std::size_t>(y) * w + x] = v;
      p.at(x, y) = static_cast<float>(v * step);
    }
  }
  return p;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

int encode(int q, const std::string& in_path, const std::string& out_path) {
  cv::Mat full = cv::imread(in_path, cv::IMREAD_COLOR);
  if (full.empty()) {
    std::cerr << "cannot read " << in_path << "\n";
    return 1;
  }
  const int shrink = shrink_for(q);
  cv::Mat bgr = full;
  if (shrink > 1) {
    cv::resize(full, bgr, cv::Size((full.cols + shrink - 1) / shrink, (full.rows + shrink - 1) / shrink), 0, 0,
               cv::INTER_AREA);
  }
  const int w = bgr.cols;
  const int h = bgr.rows;
  const int cw = (w + 1) / 2;
  const int ch = (h + 1) / 2;
  Plane luma{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
  Plane cb{cw, ch, std::vector<float>(static_cast<std::size_t>(cw) * ch, 0.f)};
  Plane cr = cb;
  std::vector<float> count(cb.data.size(), 0.f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto px = bgr.at<cv::Vec3b>(y, x);
      const float b = px[0], g = px[1], r = px[2];
      luma.at(x, y) = 0.299f * r + 0.587f * g + 0.114f * b;
      cb.at(x / 2, y / 2) += -0.168736f * r - 0.331264f * g + 0.5f * b;
      cr.at(x / 2, y / 2) += 0.5f * r - 0.418688f * g - 0.081312f * b;
      count[static_cast<std::size_t>(y / 2) * cw + x / 2] += 1.f;
    }
  }
  for (std::size_t i = 0; i < count.size(); ++i) {
    cb.data[i] /= count[i];
    cr.data[i] /= count[i];
  }
  std::vector<std::uint8_t> symbols;
  encode_plane(luma, step_for(q, false), symbols);
  encode_plane(cb, step_for(q, true), symbols);
  encode_plane(cr, step_for(q, true), symbols);

  uLongf packed_size = compressBound(symbols.size());
  std::vector<Bytef> packed(packed_size);
  if (compress2(packed.data(), &packed_size, symbols.data(), symbols.size(), 9) != Z_OK) {
    std::cerr << "compression failed\n";
    return 1;
  }
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(full.cols));
  put_u32(out, static_cast<std::uint32_t>(full.rows));
  out.push_back(static_cast<char>(q));
  put_u32(out, static_cast<std::uint32_t>(symbols.size()));
  out.append(reinterpret_cast<const char*>(packed.data()), packed_size);
  std::ofstream f(out_path, std::ios::binary);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  return f ? 0 : 1;
}

int decode(const std::string& in_path, const std::string& out_path) {
  std::ifstream f(in_path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 17 || std::memcmp(s.data(), kMagic, 4) != 0) {
    std::cerr << in_path << " is not a stream of this codec\n";
    return 1;
  }
  const int full_w = static_cast<int>(get_u32(s, 4));
  const int full_h = static_cast<int>(get_u32(s, 8));
  const int q = static_cast<unsigned char>(s[12]);
  const int shrink = shrink_for(q);
  const int w = (full_w + shrink - 1) / shrink;
  const int h = (full_h + shrink - 1) / shrink;
  uLongf raw_size = get_u32(s, 13);
  std::vector<std::uint8_t> symbols(raw_size);
  if (uncompress(symbols.data(), &raw_size, reinterpret_cast<const Bytef*>(s.data() + 17), s.size() - 17) != Z_OK) {
    std::cerr << "corrupt payload\n";
    return 1;
  }
  std::size_t pos = 0;
  const int cw = (w + 1) / 2;
  const int ch = (h + 1) / 2;
  Plane luma, cb, cr;
  try {
    luma = decode_plane(w, h, step_for(q, false), symbols, pos);
    cb = decode_plane(cw, ch, step_for(q, true), symbols, pos);
    cr = decode_plane(cw, ch, step_for(q, true), symbols, pos);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  cv::Mat bgr(h, w, CV_8UC3);
  auto clamp8 = [](float v) { return static_cast<unsigned char>(std::lround(std::fmin(255.f, std::fmax(0.f, v)))); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float yy = luma.at(x, y);
      const float u = cb.at(x / 2, y / 2);
      const float v = cr.at(x / 2, y / 2);
      bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(clamp8(yy + 1.772f * u), clamp8(yy - 0.344136f * u - 0.714136f * v),
                                          clamp8(yy + 1.402f * v));
    }
  }
  if (shrink > 1) {
    cv::Mat up;
    cv::resize(bgr, up, cv::Size(full_w, full_h), 0, 0, cv::INTER_LINEAR);
    bgr = up;
  }
  return cv::imwrite(out_path, bgr) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  int q = 28;
  std::string out, in;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "-q" && i + 1 < argc) {
      q = std::stoi(argv[++i]);
    } else if (a == "-o" && i + 1 < argc) {
      out = argv[++i];
    } else {
      in = a;
    }
  }
  if (in.empty() || out.empty() || q < 0 || q > 51) {
#ifdef QUANT_ENCODER
    std::cerr << "usage: quantenc -q <0..51> -o out.bin in.png\n";
#else
    std::cerr << "usage: quantdec -o out.png in.bin\n";
#endif
    return 2;
  }
#ifdef QUANT_ENCODER
  return encode(q, in, out);
#else
  return decode(in, out);
#endif
}
