// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "geocert/bounds.hpp"

namespace geocert {

struct PhasePanel {
    int x_dim = 0;
    int y_dim = 1;
    std::string x_label;
    std::string y_label;
};

/// State pairs plotted for an environment: consecutive pairs (0,1), (2,3), ...
inline std::vector<PhasePanel> default_panels(const std::vector<std::string>& state_names) {
    std::vector<PhasePanel> out;
    for (std::size_t i = 0; i + 1 < state_names.size(); i += 2) {
        out.push_back({static_cast<int>(i), static_cast<int>(i + 1), state_names[i], state_names[i + 1]});
    }
    return out;
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

}  // namespace detail

/// Phase-plane plot: one panel per state pair with one `reach-box` rectangle per time
/// step and sampled states as circles. Frames and axes are drawn as paths so every
/// <rect> in the document is a reachable-set box.
inline std::string phase_plot_svg(const std::vector<Box>& boxes, const std::vector<std::vector<Eigen::VectorXd>>& samples,
                                  const std::vector<PhasePanel>& panels, const std::string& title) {
    const double pw = 360, ph = 300, margin = 50;
    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panels.size() * (pw + margin) + margin << "\" height=\""
       << ph + 2 * margin << "\">\n";
    os << "<text x=\"" << margin << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << detail::xml_escape(title)
       << "</text>\n";
    const std::size_t T = boxes.empty() ? 0 : boxes.size() - 1;
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const auto& pan = panels[p];
        double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
        for (const auto& b : boxes) {
            xmin = std::min(xmin, b[static_cast<std::size_t>(pan.x_dim)].lo);
            xmax = std::max(xmax, b[static_cast<std::size_t>(pan.x_dim)].hi);
            ymin = std::min(ymin, b[static_cast<std::size_t>(pan.y_dim)].lo);
            ymax = std::max(ymax, b[static_cast<std::size_t>(pan.y_dim)].hi);
        }
        for (const auto& tr : samples) {
            for (const auto& x : tr) {
                xmin = std::min(xmin, x[pan.x_dim]);
                xmax = std::max(xmax, x[pan.x_dim]);
                ymin = std::min(ymin, x[pan.y_dim]);
                ymax = std::max(ymax, x[pan.y_dim]);
            }
        }
        if (!(xmax > xmin)) {
            xmin -= 0.5;
            xmax += 0.5;
        }
        if (!(ymax > ymin)) {
            ymin -= 0.5;
            ymax += 0.5;
        }
        double padx = 0.05 * (xmax - xmin), pady = 0.05 * (ymax - ymin);
        xmin -= padx;
        xmax += padx;
        ymin -= pady;
        ymax += pady;
        const double ox = margin + static_cast<double>(p) * (pw + margin), oy = margin;
        auto sx = [&](double v) { return ox + (v - xmin) / (xmax - xmin) * pw; };
        auto sy = [&](double v) { return oy + ph - (v - ymin) / (ymax - ymin) * ph; };

        os << "<g class=\"panel\" data-x=\"" << pan.x_dim << "\" data-y=\"" << pan.y_dim << "\">\n";
        os << "<path d=\"M" << ox << ' ' << oy << " h" << pw << " v" << ph << " h" << -pw
           << " Z\" fill=\"none\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << ox + pw / 2 << "\" y=\"" << oy + ph + 35 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
           << detail::xml_escape(pan.x_label) << "</text>\n";
        os << "<text x=\"" << ox - 35 << "\" y=\"" << oy + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 "
           << ox - 35 << ' ' << oy + ph / 2 << ")\">" << detail::xml_escape(pan.y_label) << "</text>\n";
        for (double frac : {0.0, 0.5, 1.0}) {
            double vx = xmin + frac * (xmax - xmin), vy = ymin + frac * (ymax - ymin);
            os << "<text x=\"" << sx(vx) << "\" y=\"" << oy + ph + 15 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
               << vx << "</text>\n";
            os << "<text x=\"" << ox - 5 << "\" y=\"" << sy(vy) << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << vy
               << "</text>\n";
        }
        for (std::size_t t = 0; t < boxes.size(); ++t) {
            const auto& bx = boxes[t][static_cast<std::size_t>(pan.x_dim)];
            const auto& by = boxes[t][static_cast<std::size_t>(pan.y_dim)];
            double hue = T == 0 ? 220.0 : 220.0 - 200.0 * static_cast<double>(t) / static_cast<double>(T);
            os << "<rect class=\"reach-box\" data-t=\"" << t << "\" x=\"" << sx(bx.lo) << "\" y=\"" << sy(by.hi) << "\" width=\""
               << sx(bx.hi) - sx(bx.lo) << "\" height=\"" << sy(by.lo) - sy(by.hi) << "\" fill=\"hsl(" << hue
               << ",70%,60%)\" fill-opacity=\"0.15\" stroke=\"hsl(" << hue << ",70%,40%)\"/>\n";
        }
        for (const auto& tr : samples) {
            for (std::size_t t = 0; t < tr.size(); ++t) {
                os << "<circle cx=\"" << sx(tr[t][pan.x_dim]) << "\" cy=\"" << sy(tr[t][pan.y_dim]) << "\" r=\"1.2\" fill=\"#222\"/>\n";
            }
        }
        os << "</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace geocert
