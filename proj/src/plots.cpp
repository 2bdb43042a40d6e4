#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "plgf/harness.hpp"

namespace plgf {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

std::string tick(double v) {
    std::ostringstream os;
    os << std::setprecision(3) << v;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

std::string slug(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
    return out.empty() ? "run" : out;
}

class Svg {
public:
    Svg(const std::string& title, const std::string& xlabel, const std::string& ylabel) {
        os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
            << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n"
            << "<text x=\"" << kLeft + (kWidth - kLeft - kRight) / 2 << "\" y=\"" << kHeight - 10
            << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n"
            << "<text x=\"16\" y=\"" << kTop + (kHeight - kTop - kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
            << kTop + (kHeight - kTop - kBottom) / 2 << ")\">" << escape(ylabel) << "</text>\n";
    }

    void axes(double x0, double x1, double y0, double y1) {
        x0_ = x0, x1_ = x1 == x0 ? x0 + 1 : x1, y0_ = y0, y1_ = y1 == y0 ? y0 + 1 : y1;
        os_ << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
            << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double yv = y0_ + (y1_ - y0_) * i / 4.0;
            os_ << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
            const double xv = x0_ + (x1_ - x0_) * i / 4.0;
            os_ << "<text x=\"" << px(xv) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << tick(xv)
                << "</text>\n";
        }
    }

    void polyline(const Series& s, const char* color) {
        os_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os_ << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        os_ << "\"/>\n";
    }

    void point(double x, double y, const char* color) {
        os_ << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    }

    void bar(double x_left, double x_right, double y, const char* color) {
        const double top = py(std::max(y, y0_)), base = py(y0_);
        os_ << "<rect x=\"" << px(x_left) << "\" y=\"" << top << "\" width=\"" << px(x_right) - px(x_left) << "\" height=\""
            << base - top << "\" fill=\"" << color << "\"/>\n";
    }

    void legend(std::size_t index, const std::string& name, const char* color) {
        const double y = kTop + 14 + 18 * static_cast<double>(index);
        os_ << "<rect x=\"" << kWidth - kRight + 10 << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << color
            << "\"/>\n<text x=\"" << kWidth - kRight + 26 << "\" y=\"" << y << "\">" << escape(name) << "</text>\n";
    }

    void label(double x, double y, const std::string& text) {
        os_ << "<text x=\"" << px(x) << "\" y=\"" << py(y) - 6 << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(text)
            << "</text>\n";
    }

    void write(const fs::path& path) {
        std::ofstream out(path, std::ios::trunc);
        out << os_.str() << "</svg>\n";
        if (!out) throw LoadError("cannot write " + path.string());
    }

private:
    double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0_) / (y1_ - y0_) * (kHeight - kTop - kBottom); }

    std::ostringstream os_;
    double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
};

void line_chart(const fs::path& path, const std::string& title, const std::string& ylabel, const std::vector<Series>& series) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    Svg svg(title, "epoch", ylabel);
    svg.axes(x0, x1, std::min(0.0, y0), y1);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % std::size(kPalette)];
        svg.polyline(series[k], color);
        svg.legend(k, series[k].name, color);
    }
    svg.write(path);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw LoadError("cannot write " + path.string());
}

}  // namespace

std::vector<fs::path> emit_plots(const std::vector<RunRecord>& records, const std::optional<LossSwapReport>& swap,
                                 const fs::path& out_dir) {
    std::vector<fs::path> written;
    if (records.empty() && !swap) {
        std::clog << "warning: no run records to plot\n";
        return written;
    }
    fs::create_directories(out_dir);

    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        const std::string name = slug(rec.label.empty() ? "run" + std::to_string(r) : rec.label);
        std::ostringstream csv;
        csv << "epoch,learning_rate,train_total,train_l1,train_log_l1,train_mse,val_mse,val_mae,val_mape,seconds\n";
        Series total{"train loss", {}, {}}, train_mse{"train MSE", {}, {}}, val_mse{"val MSE", {}, {}},
            val_mae{"val MAE", {}, {}}, val_mape{"val MAPE", {}, {}};
        for (const auto& e : rec.epochs) {
            csv << e.epoch << ',' << fmt(e.learning_rate) << ',' << fmt(e.train_loss.total) << ',' << fmt(e.train_loss.l1)
                << ',' << fmt(e.train_loss.log_l1) << ',' << fmt(e.train_mse) << ',' << fmt(e.val.mse) << ','
                << fmt(e.val.mae) << ',' << fmt(e.val.mape) << ',' << fmt(e.seconds) << '\n';
            const double x = e.epoch;
            for (auto [s, y] : {std::pair{&total, e.train_loss.total}, std::pair{&train_mse, e.train_mse},
                                std::pair{&val_mse, e.val.mse}, std::pair{&val_mae, e.val.mae},
                                std::pair{&val_mape, e.val.mape}}) {
                s->x.push_back(x);
                s->y.push_back(y);
            }
        }
        const auto csv_path = out_dir / ("history_" + name + ".csv");
        write_text(csv_path, csv.str());
        const auto loss_path = out_dir / ("loss_curve_" + name + ".svg");
        line_chart(loss_path, "Training loss: " + name, "loss", {total});
        const auto metric_path = out_dir / ("metrics_" + name + ".svg");
        line_chart(metric_path, "Metrics per epoch: " + name, "value", {train_mse, val_mse, val_mae, val_mape});
        written.insert(written.end(), {csv_path, loss_path, metric_path});
    }

    if (!records.empty()) {
        std::ostringstream csv;
        csv << "label,parameter_count,mean_epoch_seconds,test_mse,test_mae,test_mape\n";
        Svg svg("Parameters vs runtime", "parameters", "seconds per epoch");
        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y1 = 0;
        std::vector<std::pair<double, double>> pts;
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto& rec = records[r];
            double secs = 0.0;
            for (const auto& e : rec.epochs) secs += e.seconds;
            secs = rec.epochs.empty() ? 0.0 : secs / static_cast<double>(rec.epochs.size());
            const double params = static_cast<double>(rec.parameter_count);
            pts.emplace_back(params, secs);
            x0 = std::min(x0, params), x1 = std::max(x1, params), y1 = std::max(y1, secs);
            csv << (rec.label.empty() ? "run" + std::to_string(r) : rec.label) << ',' << rec.parameter_count << ','
                << fmt(secs) << ',' << fmt(rec.test.metrics.mse) << ',' << fmt(rec.test.metrics.mae) << ','
                << fmt(rec.test.metrics.mape) << '\n';
        }
        const double pad = std::max(1.0, 0.05 * (x1 - x0));
        svg.axes(x0 - pad, x1 + pad, 0.0, y1 > 0 ? 1.1 * y1 : 1.0);
        for (std::size_t r = 0; r < pts.size(); ++r) {
            svg.point(pts[r].first, pts[r].second, kPalette[r % std::size(kPalette)]);
            svg.label(pts[r].first, pts[r].second, records[r].label.empty() ? "run" + std::to_string(r) : records[r].label);
        }
        const auto csv_path = out_dir / "params_runtime.csv";
        const auto svg_path = out_dir / "params_runtime.svg";
        write_text(csv_path, csv.str());
        svg.write(svg_path);
        written.insert(written.end(), {csv_path, svg_path});
    }

    if (swap && !swap->rows.empty()) {
        std::ostringstream csv;
        csv << "seed,loss,mse,mae,mape\n";
        double y1 = 0.0;
        for (const auto& row : swap->rows) {
            csv << row.seed << ',' << swap->loss_a << ',' << fmt(row.a.metrics.mse) << ',' << fmt(row.a.metrics.mae) << ','
                << fmt(row.a.metrics.mape) << '\n';
            csv << row.seed << ',' << swap->loss_b << ',' << fmt(row.b.metrics.mse) << ',' << fmt(row.b.metrics.mae) << ','
                << fmt(row.b.metrics.mape) << '\n';
            y1 = std::max({y1, row.a.metrics.mape, row.b.metrics.mape});
        }
        Svg svg("Test MAPE by seed (" + swap->model + ")", "seed index", "MAPE");
        const double n = static_cast<double>(swap->rows.size());
        svg.axes(-0.5, n - 0.5, 0.0, y1 > 0 ? 1.1 * y1 : 1.0);
        for (std::size_t i = 0; i < swap->rows.size(); ++i) {
            const double c = static_cast<double>(i);
            svg.bar(c - 0.4, c, swap->rows[i].a.metrics.mape, kPalette[0]);
            svg.bar(c, c + 0.4, swap->rows[i].b.metrics.mape, kPalette[1]);
        }
        svg.legend(0, swap->loss_a, kPalette[0]);
        svg.legend(1, swap->loss_b, kPalette[1]);
        const auto csv_path = out_dir / "loss_swap.csv";
        const auto svg_path = out_dir / "loss_swap_mape.svg";
        write_text(csv_path, csv.str());
        svg.write(svg_path);
        written.insert(written.end(), {csv_path, svg_path});
    }
    return written;
}

}  // namespace plgf
