#include "dupnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dupnet/image_io.hpp"
#include "dupnet/rng.hpp"
#include "dupnet/weights_io.hpp"

namespace dupnet {

void SynthSpec::validate() const {
  if (num_images == 0) throw Error("synthdata: num_images must be >= 1");
  if (width < 8 || height < 8) throw Error("synthdata: images must be at least 8x8");
  if (channels != 1 && channels != 3) throw Error("synthdata: channels must be 1 or 3");
  if (min_objects > max_objects) throw Error("synthdata: min_objects exceeds max_objects");
  if (min_size < 4 || min_size > max_size) throw Error("synthdata: need 4 <= min_size <= max_size");
  if (max_size > width || max_size * 14 / 10 > height) throw Error("synthdata: objects do not fit the image");
}

namespace {

struct Rect {
  std::int64_t x0, y0, w, h;
  bool overlaps(const Rect& o, std::int64_t margin) const {
    return x0 < o.x0 + o.w + margin && o.x0 < x0 + w + margin && y0 < o.y0 + o.h + margin &&
           o.y0 < y0 + h + margin;
  }
};

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h, double fill) : w_(w), h_(h), px_(w * h, fill) {}

  void ellipse(double cx, double cy, double rx, double ry, double v, Rng& rng, double noise) {
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x) {
        const double dx = (x + 0.5 - cx) / rx;
        const double dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) px_[y * w_ + x] = v + noise * rng.normal();
      }
  }
  void rect(double x0, double y0, double w, double h, double v) {
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x)
        if (x + 0.5 >= x0 && x + 0.5 < x0 + w && y + 0.5 >= y0 && y + 0.5 < y0 + h) px_[y * w_ + x] = v;
  }
  void add_noise(Rng& rng, double sd) {
    for (double& p : px_) p += sd * rng.normal();
  }
  IntTensor codes(std::size_t channels) const {
    IntTensor out(Shape{1, channels, h_, w_});
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < px_.size(); ++i)
        out[c * px_.size() + i] = static_cast<std::int32_t>(std::clamp(std::floor(px_[i] + 0.5), 0.0, 255.0));
    return out;
  }

 private:
  std::size_t w_, h_;
  std::vector<double> px_;
};

Sample render(const SynthSpec& s, Rng& rng) {
  const auto W = static_cast<std::int64_t>(s.width);
  const auto H = static_cast<std::int64_t>(s.height);
  const double bg = rng.uniform(70.0, 180.0);
  Canvas cv(s.width, s.height, bg);

  const auto distractors = rng.integer(0, static_cast<std::int64_t>(s.max_distractors));
  for (std::int64_t i = 0; i < distractors; ++i) {
    const double w = rng.uniform(6.0, static_cast<double>(s.max_size));
    const double h = rng.uniform(6.0, static_cast<double>(s.max_size));
    const double v = std::clamp(bg + (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(40.0, 80.0), 0.0, 255.0);
    cv.rect(rng.uniform(0.0, W - w), rng.uniform(0.0, H - h), w, h, v);
    if (rng.bernoulli(0.5)) {
      // A lone dark blob, so a single eye-like dot is not enough evidence.
      const double r = rng.uniform(1.5, 3.0);
      cv.ellipse(rng.uniform(r, W - r), rng.uniform(r, H - r), r, r, 25.0, rng, 0.0);
    }
  }

  Sample out;
  std::vector<Rect> placed;
  const auto want = rng.integer(static_cast<std::int64_t>(s.min_objects), static_cast<std::int64_t>(s.max_objects));
  for (std::int64_t k = 0; k < want; ++k) {
    Rect r{};
    bool ok = false;
    for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
      const std::int64_t lo = static_cast<std::int64_t>(s.min_size);
      const std::int64_t hi = attempt < 200 ? static_cast<std::int64_t>(s.max_size) : lo;
      r.w = rng.integer(lo, hi);
      r.h = std::min<std::int64_t>(H, static_cast<std::int64_t>(std::llround(r.w * rng.uniform(1.15, 1.35))));
      r.x0 = rng.integer(0, W - r.w);
      r.y0 = rng.integer(0, H - r.h);
      ok = std::none_of(placed.begin(), placed.end(), [&](const Rect& p) { return p.overlaps(r, 1); });
    }
    if (!ok) throw Error("synthdata: cannot place " + std::to_string(want) + " objects without overlap");
    placed.push_back(r);

    const double cx = r.x0 + r.w / 2.0, cy = r.y0 + r.h / 2.0;
    const double face = std::clamp(bg + (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(45.0, 80.0), 40.0, 250.0);
    cv.ellipse(cx, cy, r.w / 2.0, r.h / 2.0, face, rng, 4.0);
    const double er = std::max(1.2, 0.09 * r.w);
    const double eye = std::max(0.0, face - rng.uniform(70.0, 110.0));
    cv.ellipse(cx - 0.22 * r.w, cy - 0.12 * r.h, er, er, eye, rng, 0.0);
    cv.ellipse(cx + 0.22 * r.w, cy - 0.12 * r.h, er, er, eye, rng, 0.0);
    cv.rect(cx - 0.2 * r.w, cy + 0.2 * r.h, 0.4 * r.w, std::max(1.0, 0.06 * r.h), eye);

    out.truths.push_back(GroundTruth{0, Box{cx / W, cy / H, static_cast<double>(r.w) / W, static_cast<double>(r.h) / H}});
  }
  cv.add_noise(rng, 10.0);
  out.image = cv.codes(s.channels);
  // Keep the in-memory labels identical to what a reload would produce.
  out.truths = parse_labels(format_labels(out.truths));
  return out;
}

std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05zu", i);
  return buf;
}

}  // namespace

Dataset generate_dataset(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset d;
  d.samples.reserve(spec.num_images);
  for (std::size_t i = 0; i < spec.num_images; ++i) d.samples.push_back(render(spec, rng));
  return d;
}

std::string format_labels(const std::vector<GroundTruth>& truths) {
  std::string out;
  char buf[128];
  for (const GroundTruth& t : truths) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", t.cls, t.box.cx, t.box.cy, t.box.w, t.box.h);
    out += buf;
  }
  return out;
}

std::vector<GroundTruth> parse_labels(std::string_view text) {
  std::vector<GroundTruth> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    GroundTruth g;
    if (!(ls >> g.cls >> g.box.cx >> g.box.cy >> g.box.w >> g.box.h))
      throw ParseError(line_no, "label: expected 'class cx cy w h'");
    std::string rest;
    if (ls >> rest) throw ParseError(line_no, "label: trailing text");
    for (double v : {g.box.cx, g.box.cy, g.box.w, g.box.h})
      if (!(v >= 0.0 && v <= 1.0)) throw ParseError(line_no, "label: values must lie in [0, 1]");
    if (g.cls < 0) throw ParseError(line_no, "label: negative class");
    out.push_back(g);
  }
  return out;
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const Sample& s = d.samples[i];
    const std::string stem = sample_stem(i);
    save_image(dir / (stem + (s.image.shape().c == 1 ? ".pgm" : ".ppm")), s.image);
    const std::string labels = format_labels(s.truths);
    write_file_bytes(dir / (stem + ".txt"),
                     std::span(reinterpret_cast<const std::uint8_t*>(labels.data()), labels.size()));
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> images;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm") && e.path().filename().string().starts_with("img_"))
      images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw Error("no img_*.pgm / img_*.ppm files in " + dir.string());
  Dataset d;
  for (const auto& p : images) {
    Sample s;
    s.image = load_image(p);
    auto label_path = p;
    label_path.replace_extension(".txt");
    const auto bytes = read_file_bytes(label_path);
    try {
      s.truths = parse_labels(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    } catch (const ParseError& e) {
      throw ParseError(0, label_path.string() + ": " + e.what());
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace dupnet
