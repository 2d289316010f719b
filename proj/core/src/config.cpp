#include "pbev/config.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace pbev {

namespace {

Mat3 mat3_from(const nlohmann::json& arr) {
    if (!arr.is_array() || arr.size() != 9) {
        throw ConfigError("config: matrix fields must hold 9 row-major reals");
    }
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.m[i] = arr[i].get<double>();
    return m;
}

} // namespace

WorldConfig load_world_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;

        const auto& g = j.at("grid");
        BevGrid grid(g.at("x_extent").get<double>(), g.at("y_extent").get<double>(),
                     g.at("resolution").get<double>());

        const auto& p = j.at("pillar");
        PillarSpec pillar(p.at("z_min").get<double>(), p.at("z_max").get<double>(),
                          p.at("n_z").get<int>());

        std::vector<CameraModel> cams;
        for (const auto& c : j.at("cameras")) {
            Mat3 K = mat3_from(c.at("K"));
            const Mat3 R = mat3_from(c.at("R"));
            const auto& t = c.at("t");
            if (!t.is_array() || t.size() != 3) {
                throw ConfigError("config: camera t must hold 3 reals");
            }
            const int feat_w = c.at("feat_w").get<int>();
            const int feat_h = c.at("feat_h").get<int>();
            if (c.contains("img_w") || c.contains("img_h")) {
                const double sx = static_cast<double>(feat_w) / c.at("img_w").get<double>();
                const double sy = static_cast<double>(feat_h) / c.at("img_h").get<double>();
                K(0, 0) *= sx;
                K(0, 1) *= sx;
                K(0, 2) *= sx;
                K(1, 1) *= sy;
                K(1, 2) *= sy;
            }
            cams.emplace_back(c.at("id").get<int>(), K, R,
                              Vec3{t[0].get<double>(), t[1].get<double>(), t[2].get<double>()},
                              feat_w, feat_h);
        }
        std::sort(cams.begin(), cams.end(), [](const CameraModel& a, const CameraModel& b) {
            return a.camera_id() < b.camera_id();
        });
        return WorldConfig{grid, pillar, CameraRig(std::move(cams))};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

void save_world_config(const WorldConfig& config, const std::string& path) {
    nlohmann::json j;
    j["grid"] = {{"x_extent", config.grid.x_extent()},
                 {"y_extent", config.grid.y_extent()},
                 {"resolution", config.grid.resolution()}};
    j["pillar"] = {{"z_min", config.pillar.z_min},
                   {"z_max", config.pillar.z_max},
                   {"n_z", config.pillar.n_z}};
    auto& cams = j["cameras"] = nlohmann::json::array();
    for (const auto& cam : config.rig.cameras()) {
        nlohmann::json c;
        c["id"] = cam.camera_id();
        c["K"] = std::vector<double>(cam.intrinsics().m, cam.intrinsics().m + 9);
        c["R"] = std::vector<double>(cam.rotation().m, cam.rotation().m + 9);
        c["t"] = {cam.translation().x, cam.translation().y, cam.translation().z};
        c["feat_w"] = cam.feat_width();
        c["feat_h"] = cam.feat_height();
        cams.push_back(std::move(c));
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("config: cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

} // namespace pbev
