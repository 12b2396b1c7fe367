#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "textcanvas/generator.hpp"
#include "textcanvas/types.hpp"

namespace textcanvas::cli {

/// One JSON object per timestep:
/// {"timestep": i, "beta": [...], "gamma": g, "token_strings": [...]}.
nlohmann::json trace_to_json(const generator::PaintTrace& trace,
                             const std::vector<std::string>& tokens);

struct TraceData {
  std::vector<std::string> tokens;
  Matd beta;                  // timesteps x tokens
  std::vector<double> gamma;  // per timestep

  Index timesteps() const { return beta.rows(); }
  Index token_count() const { return beta.cols(); }
};

/// Throws MalformedTrace on missing fields or inconsistent widths.
TraceData trace_from_json(const nlohmann::json& j);
TraceData load_trace(const std::string& path);

struct AttentionMapLayout {
  int cell_w = 0, cell_h = 0;
  int left = 0, top = 0;  // origin of cell (0,0)
  int gap = 2;

  /// Pixel center of the heat cell for (timestep row, token col).
  std::pair<int, int> cell_center(int row, int col) const {
    return {left + col * (cell_w + gap) + cell_w / 2,
            top + row * (cell_h + gap) + cell_h / 2};
  }
};

/// t x n heat map of attention weights, token labels under the columns and
/// timestep labels along the rows.
Image render_attention_map(const TraceData& trace,
                           AttentionMapLayout* layout_out = nullptr);

}  // namespace textcanvas::cli
