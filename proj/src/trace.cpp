#include "textcanvas/trace.hpp"

#include <algorithm>
#include <fstream>

#include "textcanvas/errors.hpp"
#include "textcanvas/font5x7.hpp"

namespace textcanvas::cli {

using nlohmann::json;

json trace_to_json(const generator::PaintTrace& trace,
                   const std::vector<std::string>& tokens) {
  json out = json::array();
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    json step;
    step["timestep"] = i + 1;
    step["beta"] = std::vector<double>(s.beta.data(),
                                       s.beta.data() + s.beta.size());
    step["gamma"] = s.gamma;
    step["token_strings"] = tokens;
    out.push_back(std::move(step));
  }
  return out;
}

TraceData trace_from_json(const json& j) {
  if (!j.is_array() || j.empty())
    throw MalformedTrace("trace must be a non-empty array of steps");
  TraceData out;
  const Index t = static_cast<Index>(j.size());
  for (Index i = 0; i < t; ++i) {
    const json& step = j[static_cast<std::size_t>(i)];
    if (!step.contains("beta") || !step.contains("gamma") ||
        !step.contains("token_strings"))
      throw MalformedTrace("trace step " + std::to_string(i) +
                           " is missing beta/gamma/token_strings");
    std::vector<double> beta = step.at("beta");
    std::vector<std::string> tokens = step.at("token_strings");
    if (beta.empty() || beta.size() != tokens.size())
      throw MalformedTrace("trace step " + std::to_string(i) +
                           ": beta and token_strings lengths differ");
    if (i == 0) {
      out.tokens = tokens;
      out.beta.resize(t, static_cast<Index>(beta.size()));
    } else if (tokens != out.tokens) {
      throw MalformedTrace("trace step " + std::to_string(i) +
                           ": token_strings differ across steps");
    }
    if (static_cast<Index>(beta.size()) != out.beta.cols())
      throw MalformedTrace("trace step " + std::to_string(i) +
                           ": inconsistent beta width");
    for (Index k = 0; k < out.beta.cols(); ++k)
      out.beta(i, k) = beta[static_cast<std::size_t>(k)];
    out.gamma.push_back(step.at("gamma").get<double>());
  }
  return out;
}

TraceData load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedTrace("trace file not found: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw MalformedTrace("trace file is not JSON: " + path);
  return trace_from_json(j);
}

namespace {

/// Heat ramp with total intensity strictly increasing in v (sum of the
/// three channels equals 3v), so the brightest cell is the arg max.
void heat_color(double v, double rgb[3]) {
  v = std::clamp(v, 0.0, 1.0);
  rgb[0] = std::min(1.0, 3.0 * v);
  rgb[1] = std::clamp(3.0 * v - 1.0, 0.0, 1.0);
  rgb[2] = std::clamp(3.0 * v - 2.0, 0.0, 1.0);
}

}  // namespace

Image render_attention_map(const TraceData& trace,
                           AttentionMapLayout* layout_out) {
  const Index t = trace.timesteps();
  const Index n = trace.token_count();
  if (t < 1 || n < 1) throw MalformedTrace("empty trace");

  std::size_t max_len = 2;
  for (const auto& tok : trace.tokens) max_len = std::max(max_len, tok.size());

  AttentionMapLayout lay;
  lay.cell_w = std::max<int>(26, static_cast<int>(6 * max_len) + 4);
  lay.cell_h = 18;
  lay.left = 26;
  lay.top = 4;

  const int w = lay.left + static_cast<int>(n) * (lay.cell_w + lay.gap) + 4;
  const int h = lay.top + static_cast<int>(t) * (lay.cell_h + lay.gap) + 12;
  Image im = Image::zero(h, w);
  im.chw.setConstant(-1.0);  // black background

  for (Index row = 0; row < t; ++row) {
    draw_text5x7(im, 4,
                 lay.top + static_cast<int>(row) * (lay.cell_h + lay.gap) +
                     (lay.cell_h - 7) / 2,
                 "T" + std::to_string(row + 1), 1.0);
    for (Index col = 0; col < n; ++col) {
      double rgb[3];
      heat_color(trace.beta(row, col), rgb);
      const int x0 = lay.left + static_cast<int>(col) * (lay.cell_w + lay.gap);
      const int y0 = lay.top + static_cast<int>(row) * (lay.cell_h + lay.gap);
      for (int y = y0; y < y0 + lay.cell_h; ++y)
        for (int x = x0; x < x0 + lay.cell_w; ++x) {
          const Index p = static_cast<Index>(y) * w + x;
          for (int c = 0; c < 3; ++c) im.chw(c, p) = 2.0 * rgb[c] - 1.0;
        }
    }
  }
  for (Index col = 0; col < n; ++col) {
    const int x0 = lay.left + static_cast<int>(col) * (lay.cell_w + lay.gap);
    const int y0 = lay.top + static_cast<int>(t) * (lay.cell_h + lay.gap) + 2;
    std::string label = trace.tokens[static_cast<std::size_t>(col)];
    const std::size_t fit = static_cast<std::size_t>((lay.cell_w - 2) / 6);
    if (label.size() > fit) label.resize(fit);
    draw_text5x7(im, x0 + 1, y0, label, 1.0);
  }
  if (layout_out) *layout_out = lay;
  return im;
}

}  // namespace textcanvas::cli
