#pragma once

#include "skyfall/image.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace skyfall {

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    std::string to_csv() const;
    std::string to_table() const;
};

/// Pairs predictions with references by position; sizes must agree.
EvalReport eval_images(const std::vector<Image>& pred, const std::vector<Image>& ref,
                       const std::vector<std::string>& names = {});

/// Compares the *.png files of two directories, matched by file name.
EvalReport eval_report(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir);

} // namespace skyfall
