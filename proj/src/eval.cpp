#include "skyfall/eval.hpp"

#include "skyfall/errors.hpp"
#include "skyfall/losses.hpp"

#include <algorithm>
#include <cstdio>

namespace skyfall {

namespace {

std::vector<std::filesystem::path> list_png(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

std::string EvalReport::to_csv() const {
    std::string s = "view,psnr,ssim\n";
    char buf[256];
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", r.name.c_str(), r.psnr, r.ssim);
        s += buf;
    }
    std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f\n", mean_psnr, mean_ssim);
    return s + buf;
}

std::string EvalReport::to_table() const {
    std::size_t w = 4;
    for (const EvalRow& r : rows) w = std::max(w, r.name.size());
    std::string s;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %9s  %7s\n", static_cast<int>(w), "view", "PSNR[dB]", "SSIM");
    s += buf;
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %9.3f  %7.4f\n", static_cast<int>(w), r.name.c_str(), r.psnr, r.ssim);
        s += buf;
    }
    std::snprintf(buf, sizeof buf, "%-*s  %9.3f  %7.4f\n", static_cast<int>(w), "mean", mean_psnr, mean_ssim);
    return s + buf;
}

EvalReport eval_images(const std::vector<Image>& pred, const std::vector<Image>& ref,
                       const std::vector<std::string>& names) {
    if (pred.size() != ref.size()) {
        throw ContractError("prediction count " + std::to_string(pred.size()) + " differs from reference count " +
                            std::to_string(ref.size()));
    }
    if (pred.empty()) throw ContractError("nothing to evaluate");
    EvalReport rep;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!pred[i].same_shape(ref[i])) throw ContractError("image " + std::to_string(i) + " shape mismatch");
        EvalRow row;
        row.name = i < names.size() ? names[i] : std::to_string(i);
        row.psnr = psnr(pred[i], ref[i]);
        row.ssim = ssim(pred[i], ref[i]);
        rep.mean_psnr += row.psnr;
        rep.mean_ssim += row.ssim;
        rep.rows.push_back(row);
    }
    rep.mean_psnr /= static_cast<double>(pred.size());
    rep.mean_ssim /= static_cast<double>(pred.size());
    return rep;
}

EvalReport eval_report(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir) {
    const auto preds = list_png(pred_dir);
    const auto refs = list_png(ref_dir);
    if (preds.size() != refs.size()) {
        throw ContractError("'" + pred_dir.string() + "' has " + std::to_string(preds.size()) + " images but '" +
                            ref_dir.string() + "' has " + std::to_string(refs.size()));
    }
    std::vector<Image> p, r;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].filename() != refs[i].filename()) {
            throw ContractError("no reference for '" + preds[i].filename().string() + "'");
        }
        p.push_back(read_png(preds[i]));
        r.push_back(read_png(refs[i]));
        names.push_back(preds[i].filename().string());
    }
    return eval_images(p, r, names);
}

} // namespace skyfall
