#include "rulelab/vision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rulelab/error.hpp"
#include "rulelab/parallel.hpp"

namespace rulelab {

int ElementMask::popcount() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), 1));
}

namespace {

std::vector<Component> label_components(const std::vector<std::uint8_t>& mask, int w, int h) {
  std::vector<Component> out;
  std::vector<char> seen(mask.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < w * h; ++start) {
    if (!mask[start] || seen[start]) continue;
    Component c;
    c.row_min = c.col_min = std::max(w, h);
    c.row_max = c.col_max = -1;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      c.pixels.push_back(p);
      const int i = p / w, j = p % w;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int ni = i + di, nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= h || nj >= w) continue;
          const int q = ni * w + nj;
          if (mask[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
    }
    std::sort(c.pixels.begin(), c.pixels.end());
    for (int p : c.pixels) {
      const int i = p / w, j = p % w;
      c.cx += j + 0.5;
      c.cy += i + 0.5;
      c.row_min = std::min(c.row_min, i);
      c.row_max = std::max(c.row_max, i);
      c.col_min = std::min(c.col_min, j);
      c.col_max = std::max(c.col_max, j);
    }
    c.area = static_cast<int>(c.pixels.size());
    c.cx /= c.area;
    c.cy /= c.area;
    out.push_back(std::move(c));
  }
  return out;
}

int sign_of(double v) { return (v > 0) - (v < 0); }

FeatureRecord invalid_record(TaskId task, int size, std::string reason) {
  FeatureRecord r;
  r.task = task;
  r.image_size = size;
  r.valid = false;
  r.reason = std::move(reason);
  return r;
}

}  // namespace

std::vector<ElementMask> segment(const RasterImage& image,
                                 const std::vector<ElementRange>& ranges) {
  const int w = image.width, h = image.height;
  std::vector<ElementMask> masks(ranges.size());
  for (std::size_t e = 0; e < ranges.size(); ++e) {
    masks[e].element = ranges[e].element;
    masks[e].width = w;
    masks[e].height = h;
    masks[e].mask.assign(static_cast<std::size_t>(w) * h, 0);
  }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const Hsv8 hsv = rgb_to_hsv(image.at(i, j));
      for (std::size_t e = 0; e < ranges.size(); ++e)
        if (ranges[e].range.contains(hsv)) {
          masks[e].mask[static_cast<std::size_t>(i) * w + j] = 1;
          break;
        }
    }
  for (auto& m : masks) m.components = label_components(m.mask, w, h);
  return masks;
}

CountResult count_elements(const std::vector<ElementMask>& masks) {
  for (const auto& m : masks)
    if (m.components.size() != 1)
      return {false, m.element + ": " + std::to_string(m.components.size()) + " components"};
  return {true, ""};
}

std::array<double, 2> regression_xy(const FeatureRecord& r) {
  switch (r.task) {
    case TaskId::A: return {r.l1 * r.h2, r.l2 * r.h1};
    case TaskId::B: return {r.l1 * r.h1, r.l2 * r.h2};
    case TaskId::C: return {r.r1, r.r2};
    case TaskId::D: return {r.l1, r.l2};
  }
  return {0, 0};
}

FeatureRecord features_from_masks(const std::vector<ElementMask>& masks, const RasterImage& image,
                                  TaskId task, int original_size) {
  const CountResult count = count_elements(masks);
  if (!count.valid) return invalid_record(task, original_size, count.reason);
  if (masks.size() != element_names(task).size())
    return invalid_record(task, original_size, "wrong element set for task " + task_name(task));

  FeatureRecord r;
  r.task = task;
  r.image_size = original_size;
  const double W = image.width;
  for (const auto& m : masks) {
    std::array<double, 3> sum{0, 0, 0};
    const auto& c = m.components[0];
    for (int p : c.pixels) {
      const Rgb8 px = image.at(p / image.width, p % image.width);
      sum[0] += px.r;
      sum[1] += px.g;
      sum[2] += px.b;
    }
    for (double& s : sum) s /= 255.0 * c.area;
    r.mean_rgb.push_back(sum);
  }

  switch (task) {
    case TaskId::A: {
      const Component& sun = masks[0].components[0];
      const Component& pole = masks[1].components[0];
      const Component& shadow = masks[2].components[0];
      const double pole_x = pole.cx;
      const double h2 = pole.row_max + 1 - pole.row_min;
      const double h1 = pole.row_min - sun.cy;
      const double l1 = std::fabs(sun.cx - pole_x);
      if (!(h2 > 0)) return invalid_record(task, original_size, "degenerate: zero-height pole");
      if (!(h1 > 0))
        return invalid_record(task, original_size, "degenerate: sun centroid not above pole top");
      if (!(l1 > 0))
        return invalid_record(task, original_size, "degenerate: sun centroid on pole centerline");
      double tip_x = pole_x;
      for (int p : shadow.pixels) {
        const double x = p % image.width + 0.5;
        if (std::fabs(x - pole_x) > std::fabs(tip_x - pole_x)) tip_x = x;
      }
      r.sun_side = sign_of(sun.cx - pole_x);
      r.shadow_side = sign_of(tip_x - pole_x);
      r.zero_shadow = r.shadow_side == 0;
      const double l2 = r.zero_shadow ? 0.0 : std::fabs(tip_x - pole_x) + 0.5;
      r.l1 = l1 / W;
      r.l2 = l2 / W;
      r.h1 = h1 / W;
      r.h2 = h2 / W;
      r.ratio = (l2 * h1) / (l1 * h2);
      break;
    }
    case TaskId::B: {
      const Component& a = masks[0].components[0];
      const Component& b = masks[1].components[0];
      r.l1 = a.col_min / W;
      r.h1 = (a.row_max + 1 - a.row_min) / W;
      r.l2 = b.col_min / W;
      r.h2 = (b.row_max + 1 - b.row_min) / W;
      if (!(r.l1 > 0))
        return invalid_record(task, original_size, "degenerate: near rectangle touches left border");
      r.ratio = (r.l2 * r.h2) / (r.l1 * r.h1);
      break;
    }
    case TaskId::C: {
      const Component& a = masks[0].components[0];
      const Component& b = masks[1].components[0];
      r.r1 = std::sqrt(a.area / M_PI) / W;
      r.r2 = std::sqrt(b.area / M_PI) / W;
      r.gap = std::hypot(a.cx - b.cx, a.cy - b.cy) / W - r.r1 - r.r2;
      r.anchor_x = a.cx / W;
      r.anchor_y = a.cy / W;
      r.ratio = r.r2 / r.r1;
      break;
    }
    case TaskId::D: {
      const Component& a = masks[0].components[0];
      const Component& b = masks[1].components[0];
      r.l1 = std::sqrt(static_cast<double>(a.area)) / W;
      r.l2 = std::sqrt(static_cast<double>(b.area)) / W;
      r.small_top = 2 * (a.row_max + 1) <= image.height;
      r.large_bottom = 2 * b.row_min >= image.height;
      r.anchor_x = a.cx / W;
      r.anchor_y = a.cy / W;
      r.ratio = r.l2 / r.l1;
      break;
    }
  }
  r.valid = true;
  return r;
}

FeatureRecord extract_features(const RasterImage& image, TaskId task, int upscale_factor,
                               const RangeTable& ranges) {
  if (upscale_factor != 1 && upscale_factor != 4)
    throw ConfigError("upscale factor must be 1 or 4, got " + std::to_string(upscale_factor));
  const RasterImage work = upscale_nearest(image, upscale_factor);
  const auto masks = segment(work, ranges.of(task));
  return features_from_masks(masks, work, task, image.width);
}

bool fine_ok(double ratio, TaskId task, double eps) {
  const double t = target_ratio(task);
  return ratio >= t * (1 - eps) && ratio <= t * (1 + eps);
}

RuleVerdict verdict(const FeatureRecord& r, TaskId task, double eps) {
  if (!r.valid) throw Error("verdict on invalid record (" + r.reason + ")");
  if (r.task != task) throw Error("verdict: record task does not match requested task");
  RuleVerdict v;
  v.fine_ratio = r.ratio;
  v.fine_ok = fine_ok(r.ratio, task, eps);
  switch (task) {
    case TaskId::A:
      if (r.zero_shadow) {
        v.coarse_ok = true;
        v.flagged = true;
      } else {
        v.coarse_ok = r.sun_side != r.shadow_side;
      }
      break;
    case TaskId::B: v.coarse_ok = r.h1 > r.h2; break;
    case TaskId::C: v.coarse_ok = std::fabs(r.r1 - r.r2) > 0.5 / r.image_size; break;
    case TaskId::D: v.coarse_ok = r.l1 < r.l2 && r.small_top && r.large_bottom; break;
  }
  return v;
}

FeatureRecord evaluate_file(const std::filesystem::path& file, TaskId task,
                            const EvalConfig& config) {
  RasterImage img;
  try {
    img = read_png(file);
  } catch (const Error& e) {
    FeatureRecord r = invalid_record(task, 0, std::string("file error: ") + e.what());
    r.source = file.filename().string();
    return r;
  }
  const bool size_ok = img.width == img.height &&
                       (config.expected_size > 0 ? img.width == config.expected_size
                                                 : (img.width == 32 || img.width == 64));
  FeatureRecord r =
      size_ok ? extract_features(img, task, config.upscale_factor, config.ranges)
              : invalid_record(task, img.width,
                               "file error: ill-sized " + std::to_string(img.width) + "x" +
                                   std::to_string(img.height));
  r.source = file.filename().string();
  return r;
}

DirectoryReport evaluate_directory(const std::filesystem::path& dir, TaskId task,
                                   const EvalConfig& config, std::ostream* csv) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });

  DirectoryReport rep;
  rep.task = task;
  rep.n_files = static_cast<int>(files.size());
  rep.records.resize(files.size());
  rep.verdicts.resize(files.size());
  if (csv) *csv << records_csv_header(task);
  constexpr int kBlock = 256;
  for (int begin = 0; begin < rep.n_files; begin += kBlock) {
    const int end = std::min(rep.n_files, begin + kBlock);
    parallel_for(end - begin, config.threads, [&](int k) {
      const int i = begin + k;
      rep.records[i] = evaluate_file(files[i], task, config);
      if (rep.records[i].valid) rep.verdicts[i] = verdict(rep.records[i], task, config.eps);
    });
    for (int i = begin; i < end; ++i) {
      const auto& r = rep.records[i];
      if (!r.valid) {
        ++rep.n_invalid;
        if (r.reason.rfind("file error", 0) == 0) ++rep.n_file_errors;
      } else {
        const auto& v = *rep.verdicts[i];
        rep.coarse_violations += !v.coarse_ok;
        rep.fine_conforming += v.fine_ok;
        rep.flagged += v.flagged;
      }
      if (csv) *csv << record_csv_row(r, rep.verdicts[i]);
    }
  }
  if (rep.n_files == 0) rep.warnings.push_back("no PNG files in " + dir.string());
  return rep;
}

// ---- CSV -------------------------------------------------------------------

namespace {

const char* const kCsvColumns[] = {
    "file",      "task",        "valid",      "reason",       "image_size", "l1",
    "l2",        "h1",          "h2",         "r1",           "r2",         "gap",
    "anchor_x",  "anchor_y",    "sun_side",   "shadow_side",  "zero_shadow", "small_top",
    "large_bottom", "ratio",    "coarse_ok",  "fine_ok",      "flagged"};

}  // namespace

std::string records_csv_header(TaskId task) {
  std::string out;
  for (const char* c : kCsvColumns) out += std::string(out.empty() ? "" : ",") + c;
  for (const auto& name : element_names(task))
    for (const char* ch : {"_r", "_g", "_b"}) out += "," + name + ch;
  return out + "\n";
}

std::string record_csv_row(const FeatureRecord& r, const std::optional<RuleVerdict>& v) {
  std::vector<std::string> f;
  auto num = [&](double x) { f.push_back(format_double(x)); };
  auto flag = [&](bool b) { f.push_back(b ? "1" : "0"); };
  f.push_back(csv_escape(r.source));
  f.push_back(task_name(r.task));
  flag(r.valid);
  f.push_back(csv_escape(r.reason));
  f.push_back(std::to_string(r.image_size));
  for (double x : {r.l1, r.l2, r.h1, r.h2, r.r1, r.r2, r.gap, r.anchor_x, r.anchor_y}) num(x);
  f.push_back(std::to_string(r.sun_side));
  f.push_back(std::to_string(r.shadow_side));
  flag(r.zero_shadow);
  flag(r.small_top);
  flag(r.large_bottom);
  if (r.valid) num(r.ratio); else f.push_back("");
  if (v) {
    flag(v->coarse_ok);
    flag(v->fine_ok);
    flag(v->flagged);
  } else {
    f.insert(f.end(), {"", "", ""});
  }
  const std::size_t n_el = element_names(r.task).size();
  for (std::size_t e = 0; e < n_el; ++e)
    for (int ch = 0; ch < 3; ++ch)
      if (e < r.mean_rgb.size()) num(r.mean_rgb[e][ch]); else f.push_back("");
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
  return out + "\n";
}

void write_records_csv(const std::filesystem::path& path, const std::vector<FeatureRecord>& records,
                       double eps) {
  if (records.empty()) {
    write_text_file(path, "");
    return;
  }
  std::ostringstream ss;
  ss << records_csv_header(records.front().task);
  for (const auto& r : records) {
    std::optional<RuleVerdict> v;
    if (r.valid) v = verdict(r, r.task, eps);
    ss << record_csv_row(r, v);
  }
  write_text_file(path, ss.str());
}

std::vector<FeatureRecord> read_records_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<FeatureRecord> out;
  if (!std::getline(in, line)) return out;
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* c : kCsvColumns)
    if (!col.count(c)) throw Error("records CSV " + path.string() + " lacks column " + c);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error("records CSV " + path.string() + " line " + std::to_string(line_no) +
                  ": expected " + std::to_string(header.size()) + " fields");
    auto get = [&](const char* name) -> const std::string& { return f[col.at(name)]; };
    auto num = [&](const char* name) { return get(name).empty() ? 0.0 : std::stod(get(name)); };
    FeatureRecord r;
    r.source = get("file");
    r.task = parse_task(get("task"));
    r.valid = get("valid") == "1";
    r.reason = get("reason");
    r.image_size = std::stoi(get("image_size"));
    r.l1 = num("l1");
    r.l2 = num("l2");
    r.h1 = num("h1");
    r.h2 = num("h2");
    r.r1 = num("r1");
    r.r2 = num("r2");
    r.gap = num("gap");
    r.anchor_x = num("anchor_x");
    r.anchor_y = num("anchor_y");
    r.sun_side = std::stoi(get("sun_side"));
    r.shadow_side = std::stoi(get("shadow_side"));
    r.zero_shadow = get("zero_shadow") == "1";
    r.small_top = get("small_top") == "1";
    r.large_bottom = get("large_bottom") == "1";
    r.ratio = num("ratio");
    if (r.valid) {
      for (const auto& name : element_names(r.task)) {
        std::array<double, 3> rgb{};
        const char* suffix[3] = {"_r", "_g", "_b"};
        for (int ch = 0; ch < 3; ++ch) {
          auto it = col.find(name + suffix[ch]);
          if (it == col.end()) throw Error("records CSV lacks color column for " + name);
          rgb[ch] = std::stod(f[it->second]);
        }
        r.mean_rgb.push_back(rgb);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

json directory_summary_json(const DirectoryReport& rep, const EvalConfig& config) {
  return {{"schema", "rulelab-eval-summary"},
          {"version", 1},
          {"task", task_name(rep.task)},
          {"n_files", rep.n_files},
          {"n_invalid", rep.n_invalid},
          {"n_file_errors", rep.n_file_errors},
          {"coarse_violations", rep.coarse_violations},
          {"fine_conforming", rep.fine_conforming},
          {"flagged", rep.flagged},
          {"eps", config.eps},
          {"upscale_factor", config.upscale_factor},
          {"warnings", rep.warnings}};
}

}  // namespace rulelab
