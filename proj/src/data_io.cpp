#include "afrpn/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "afrpn/rng.hpp"

namespace afrpn {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (image_h < 16 || image_w < 16 || image_h % 16 || image_w % 16)
    throw Error("SynthConfig: image dims must be positive multiples of 16");
  if (min_instances < 0 || max_instances < min_instances)
    throw Error("SynthConfig: bad instance count range");
  if (!(min_short_side >= 1.0) || max_short_side < min_short_side)
    throw Error("SynthConfig: bad shorter-side range");
  if (!(min_aspect >= 1.0) || max_aspect < min_aspect)
    throw Error("SynthConfig: bad aspect range");
  if (fill_lo > fill_hi || background_lo > background_hi)
    throw Error("SynthConfig: bad intensity range");
  if (ignore_prob < 0.0 || ignore_prob > 1.0)
    throw Error("SynthConfig: bad ignore probability");
  if (!(noise_sigma >= 0.0)) throw Error("SynthConfig: bad noise sigma");
}

Scene gen_scene(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng = Rng::child(cfg.seed, static_cast<uint64_t>(index));
  const int h = cfg.image_h, w = cfg.image_w;

  Scene scene;
  scene.id = "img_" + std::to_string(index);
  scene.image = Tensor({3, h, w});

  const int count = rng.uniform_int(cfg.min_instances, cfg.max_instances);
  std::vector<double> fill_of;
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const double short_side = rng.uniform(cfg.min_short_side, cfg.max_short_side);
      const double aspect = rng.uniform(cfg.min_aspect, cfg.max_aspect);
      const double long_side = short_side * aspect;
      const double theta = rng.uniform(-cfg.max_orientation_deg, cfg.max_orientation_deg) *
                           (3.14159265358979323846 / 180.0);
      const Point2 u{std::cos(theta), std::sin(theta)};       // long axis
      const Point2 v{-u.y, u.x};
      const double ex = std::abs(u.x) * long_side * 0.5 + std::abs(v.x) * short_side * 0.5;
      const double ey = std::abs(u.y) * long_side * 0.5 + std::abs(v.y) * short_side * 0.5;
      if (2.0 * ex > w - 2.0 || 2.0 * ey > h - 2.0) continue;  // cannot fit
      const double cx = rng.uniform(ex + 1.0, w - ex - 1.0);
      const double cy = rng.uniform(ey + 1.0, h - ey - 1.0);
      const Point2 c{cx, cy};
      const Point2 hu = u * (long_side * 0.5);
      const Point2 hv = v * (short_side * 0.5);
      const std::array<Point2, 4> corners = {c - hu - hv, c + hu - hv,
                                             c + hu + hv, c - hu + hv};
      TextInstance inst = make_text_instance(canonicalize(corners),
                                             rng.uniform() < cfg.ignore_prob);
      bool overlaps = false;
      for (const TextInstance& other : scene.instances) {
        const std::vector<Point2> inter = intersect_convex(
            quad_points(inst.core.quad), quad_points(other.core.quad));
        if (polygon_area(inter) > 1e-9) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      fill_of.push_back(rng.uniform(cfg.fill_lo, cfg.fill_hi));
      scene.instances.push_back(std::move(inst));
      placed = true;
    }
    // unplaceable after 50 attempts -> skipped
  }

  const double bg = rng.uniform(cfg.background_lo, cfg.background_hi);
  scene.image.fill(bg);

  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < scene.instances.size(); ++i) {
    const Quad& q = scene.instances[i].quad;
    const AABB box = aabb(q);
    const int y0 = std::max(0, static_cast<int>(std::floor(box.ymin)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(box.ymax)));
    const int x0 = std::max(0, static_cast<int>(std::floor(box.xmin)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(box.xmax)));
    const double value = fill_of[i];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!point_in_polygon(Point2(x + 0.5, y + 0.5), q)) continue;
        const size_t at = static_cast<size_t>(y) * w + x;
        scene.image.data[at] = value;
        scene.image.data[plane + at] = value;
        scene.image.data[2 * plane + at] = value;
      }
    }
  }

  if (cfg.noise_sigma > 0.0) {
    for (double& px : scene.image.data)
      px = std::clamp(px + cfg.noise_sigma * rng.gaussian(), 0.0, 1.0);
  }
  return scene;
}

namespace {

bool parse_number(const std::string& tok, double* out) {
  const char* s = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0' || !std::isfinite(v)) return false;
  *out = v;
  return true;
}

std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace

ParseResult parse_icdar_gt(const std::string& text) {
  ParseResult result;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (line_no == 1 && raw.size() >= 3 && static_cast<unsigned char>(raw[0]) == 0xEF &&
        static_cast<unsigned char>(raw[1]) == 0xBB &&
        static_cast<unsigned char>(raw[2]) == 0xBF)
      raw = raw.substr(3);  // UTF-8 BOM
    const std::string line = strip(raw);
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    fields.push_back(cur);

    if (fields.size() < 8) {
      result.issues.push_back({line_no, "ParseError", "expected 8 coordinates"});
      continue;
    }
    std::array<Point2, 4> v;
    bool ok = true;
    for (int i = 0; i < 4 && ok; ++i) {
      double x = 0.0, y = 0.0;
      ok = parse_number(strip(fields[static_cast<size_t>(2 * i)]), &x) &&
           parse_number(strip(fields[static_cast<size_t>(2 * i + 1)]), &y);
      if (ok) v[static_cast<size_t>(i)] = Point2(x, y);
    }
    if (!ok) {
      result.issues.push_back({line_no, "ParseError", "non-numeric coordinate"});
      continue;
    }
    // Beyond the 8 coordinates: the last field is the transcription; a
    // single extra field before it is a script tag.
    std::optional<std::string> transcription;
    if (fields.size() == 9) {
      transcription = strip(fields[8]);
    } else if (fields.size() >= 10) {
      std::string t = fields[9];
      for (size_t i = 10; i < fields.size(); ++i) t += "," + fields[i];
      transcription = strip(t);
    }
    const bool ignore = transcription && *transcription == "###";
    try {
      result.instances.push_back(
          make_text_instance(canonicalize(v), ignore, transcription));
    } catch (const DegenerateQuad& e) {
      result.issues.push_back({line_no, "DegenerateQuad", e.what()});
    }
  }
  return result;
}

std::string serialize_icdar_gt(const std::vector<TextInstance>& instances) {
  std::ostringstream out;
  char buf[64];
  for (const TextInstance& inst : instances) {
    for (int i = 0; i < 4; ++i) {
      const Point2& p = inst.quad.v[static_cast<size_t>(i)];
      std::snprintf(buf, sizeof buf, "%.17g", p.x);
      out << buf << ",";
      std::snprintf(buf, sizeof buf, "%.17g", p.y);
      out << buf << ",";
    }
    out << (inst.ignore ? "###" : inst.transcription.value_or("text")) << "\n";
  }
  return out.str();
}

Scene resize_shorter_side(const Scene& scene, int s) {
  if (s < 16) throw Error("resize_shorter_side: S must be >= 16");
  const int h = scene.height(), w = scene.width();
  const double factor = static_cast<double>(s) / std::min(h, w);
  int nh, nw;
  if (h <= w) {
    nh = s;
    nw = static_cast<int>(std::lround(w * factor));
  } else {
    nw = s;
    nh = static_cast<int>(std::lround(h * factor));
  }
  const int ph = (nh + 15) / 16 * 16;
  const int pw = (nw + 15) / 16 * 16;

  Scene out;
  out.id = scene.id;
  out.image = Tensor({3, ph, pw});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ph; ++y) {
      // Edge replication outside the resized content.
      const int yy = std::min(y, nh - 1);
      const double sy = std::clamp((yy + 0.5) / factor - 0.5, 0.0, h - 1.0);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - y0;
      for (int x = 0; x < pw; ++x) {
        const int xx = std::min(x, nw - 1);
        const double sx = std::clamp((xx + 0.5) / factor - 0.5, 0.0, w - 1.0);
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - x0;
        const double v00 = scene.image.at3(c, y0, x0);
        const double v01 = scene.image.at3(c, y0, x1);
        const double v10 = scene.image.at3(c, y1, x0);
        const double v11 = scene.image.at3(c, y1, x1);
        out.image.at3(c, y, x) =
            (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  for (const TextInstance& inst : scene.instances) {
    std::array<Point2, 4> v;
    for (int i = 0; i < 4; ++i)
      v[static_cast<size_t>(i)] = inst.quad.v[static_cast<size_t>(i)] * factor;
    out.instances.push_back(
        make_text_instance(canonicalize(v), inst.ignore, inst.transcription));
  }
  return out;
}

namespace {

uint8_t quantize(double v) {
  const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  return static_cast<uint8_t>(q);
}

}  // namespace

void save_ppm(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("save_ppm: expected (3,H,W) image");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_ppm: cannot open " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t at = static_cast<size_t>(y) * w + x;
      row[static_cast<size_t>(x) * 3] = quantize(image.data[at]);
      row[static_cast<size_t>(x) * 3 + 1] = quantize(image.data[plane + at]);
      row[static_cast<size_t>(x) * 3 + 2] = quantize(image.data[2 * plane + at]);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("save_ppm: write failed for " + path);
}

namespace {

int read_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments.
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string junk;
      std::getline(in, junk);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw FormatError("ppm: bad header token");
  return value;
}

}  // namespace

Tensor load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_ppm: cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (!in || (magic != "P6" && magic != "P5"))
    throw FormatError("load_ppm: bad magic in " + path);
  const bool color = magic == "P6";
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("load_ppm: unsupported header in " + path);
  in.get();  // single whitespace after maxval

  const size_t n = static_cast<size_t>(w) * h * (color ? 3 : 1);
  std::vector<uint8_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw FormatError("load_ppm: truncated pixel data in " + path);

  Tensor image({3, h, w});
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i) {
    if (color) {
      image.data[i] = raw[i * 3] / 255.0;
      image.data[plane + i] = raw[i * 3 + 1] / 255.0;
      image.data[2 * plane + i] = raw[i * 3 + 2] / 255.0;
    } else {
      const double v = raw[i] / 255.0;
      image.data[i] = image.data[plane + i] = image.data[2 * plane + i] = v;
    }
  }
  return image;
}

void save_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int h,
              int w) {
  if (static_cast<size_t>(h) * w != pixels.size())
    throw ShapeError("save_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_pgm: cannot open " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("save_pgm: write failed for " + path);
}

namespace {

std::string base64_encode(const std::string& bytes) {
  static const char* table =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 2 < bytes.size()) {
    const uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                       (static_cast<uint8_t>(bytes[i + 1]) << 8) |
                       static_cast<uint8_t>(bytes[i + 2]);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out.push_back(table[v & 63]);
    i += 3;
  }
  const size_t rest = bytes.size() - i;
  if (rest == 1) {
    const uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                       (static_cast<uint8_t>(bytes[i + 1]) << 8);
    out.push_back(table[(v >> 18) & 63]);
    out.push_back(table[(v >> 12) & 63]);
    out.push_back(table[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

}  // namespace

std::string render_svg(const Scene& scene, const std::vector<SvgBox>& boxes) {
  const int h = scene.height(), w = scene.width();
  std::ostringstream ppm;
  ppm << "P6\n" << w << " " << h << "\n255\n";
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i) {
    ppm.put(static_cast<char>(quantize(scene.image.data[i])));
    ppm.put(static_cast<char>(quantize(scene.image.data[plane + i])));
    ppm.put(static_cast<char>(quantize(scene.image.data[2 * plane + i])));
  }

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" "
      << "xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  svg << "  <image width=\"" << w << "\" height=\"" << h
      << "\" xlink:href=\"data:image/x-portable-pixmap;base64,"
      << base64_encode(ppm.str()) << "\"/>\n";
  for (const SvgBox& b : boxes) {
    svg << "  <polygon points=\"";
    for (int i = 0; i < 4; ++i) {
      const Point2& p = b.quad.v[static_cast<size_t>(i)];
      svg << (i ? " " : "") << p.x << "," << p.y;
    }
    svg << "\" fill=\"" << b.fill << "\" stroke=\"" << b.stroke
        << "\" stroke-width=\"" << b.stroke_width << "\" opacity=\"" << b.opacity
        << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_scene(const std::string& dir, const Scene& scene) {
  fs::create_directories(dir);
  save_ppm((fs::path(dir) / (scene.id + ".ppm")).string(), scene.image);
  std::ofstream gt(fs::path(dir) / ("gt_" + scene.id + ".txt"));
  if (!gt) throw IoError("write_scene: cannot write gt for " + scene.id);
  gt << serialize_icdar_gt(scene.instances);
}

Scene load_scene(const std::string& dir, const std::string& id) {
  Scene scene;
  scene.id = id;
  scene.image = load_ppm((fs::path(dir) / (id + ".ppm")).string());
  std::ifstream gt(fs::path(dir) / ("gt_" + id + ".txt"));
  if (!gt) throw IoError("load_scene: missing gt for " + id);
  std::ostringstream text;
  text << gt.rdbuf();
  ParseResult parsed = parse_icdar_gt(text.str());
  for (const ParseIssue& issue : parsed.issues)
    throw ParseError(issue.line, "in gt_" + id + ".txt: " + issue.message);
  scene.instances = std::move(parsed.instances);
  return scene;
}

std::vector<DatasetEntry> list_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("list_dataset: not a directory: " + dir);
  std::vector<DatasetEntry> entries;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 4 && name.starts_with("img_") && name.ends_with(".ppm")) {
      DatasetEntry d;
      d.id = name.substr(0, name.size() - 4);
      d.image_path = e.path().string();
      d.gt_path = (fs::path(dir) / ("gt_" + d.id + ".txt")).string();
      entries.push_back(std::move(d));
    }
  }
  std::sort(entries.begin(), entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
    // numeric order when ids share the img_<n> pattern
    auto key = [](const std::string& id) {
      const std::string digits = id.substr(4);
      return digits.find_first_not_of("0123456789") == std::string::npos && !digits.empty()
                 ? std::stoll(digits)
                 : static_cast<long long>(-1);
    };
    const long long ka = key(a.id), kb = key(b.id);
    if (ka >= 0 && kb >= 0 && ka != kb) return ka < kb;
    return a.id < b.id;
  });
  return entries;
}

}  // namespace afrpn
