#include "maod/acquisition.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace maod {

const char* decode_status_name(DecodeStatus s) {
    switch (s) {
        case DecodeStatus::Ok: return "ok";
        case DecodeStatus::BadStart: return "bad_start";
        case DecodeStatus::UnknownType: return "unknown_type";
        case DecodeStatus::ShortRead: return "short_read";
        case DecodeStatus::LengthMismatch: return "length_mismatch";
        case DecodeStatus::BadChecksum: return "bad_checksum";
    }
    return "?";
}

namespace {

std::optional<std::size_t> payload_length(std::uint8_t type) {
    switch (static_cast<FrameType>(type)) {
        case FrameType::PositionRequest: return 0;
        case FrameType::PositionResponse: return 4;
        case FrameType::NoObject: return 0;
        case FrameType::Error: return 1;
    }
    return std::nullopt;
}

std::uint8_t xor_checksum(const std::uint8_t* data, std::size_t n) {
    std::uint8_t c = 0;
    for (std::size_t i = 0; i < n; ++i) c ^= data[i];
    return c;
}

void push_i16(std::vector<std::uint8_t>& out, std::int16_t v) {
    const auto u = static_cast<std::uint16_t>(v);
    out.push_back(static_cast<std::uint8_t>(u & 0xFF));
    out.push_back(static_cast<std::uint8_t>(u >> 8));
}

std::int16_t read_i16(const std::uint8_t* p) {
    const auto u = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    return static_cast<std::int16_t>(u);
}

}  // namespace

std::size_t frame_length(FrameType type) {
    auto n = payload_length(static_cast<std::uint8_t>(type));
    require_internal(n.has_value(), "frame_length on unknown type");
    return 3 + *n;
}

std::vector<std::uint8_t> encode_frame(const AcqFrame& frame) {
    std::vector<std::uint8_t> out;
    out.push_back(kFrameStart);
    out.push_back(static_cast<std::uint8_t>(frame.type));
    switch (frame.type) {
        case FrameType::PositionRequest:
        case FrameType::NoObject:
            break;
        case FrameType::PositionResponse:
            push_i16(out, frame.x_mm);
            push_i16(out, frame.y_mm);
            break;
        case FrameType::Error:
            out.push_back(frame.error_code);
            break;
    }
    out.push_back(xor_checksum(out.data(), out.size()));
    return out;
}

DecodeResult decode_frame(const std::vector<std::uint8_t>& bytes) {
    DecodeResult r;
    if (bytes.empty()) {
        r.status = DecodeStatus::ShortRead;
        return r;
    }
    if (bytes[0] != kFrameStart) {
        r.status = DecodeStatus::BadStart;
        return r;
    }
    if (bytes.size() < 2) {
        r.status = DecodeStatus::ShortRead;
        return r;
    }
    const auto payload = payload_length(bytes[1]);
    if (!payload) {
        r.status = DecodeStatus::UnknownType;
        return r;
    }
    const std::size_t want = 3 + *payload;
    if (bytes.size() < want) {
        r.status = DecodeStatus::ShortRead;
        return r;
    }
    if (bytes.size() > want) {
        r.status = DecodeStatus::LengthMismatch;
        return r;
    }
    if (xor_checksum(bytes.data(), want - 1) != bytes[want - 1]) {
        r.status = DecodeStatus::BadChecksum;
        return r;
    }
    r.frame.type = static_cast<FrameType>(bytes[1]);
    switch (r.frame.type) {
        case FrameType::PositionResponse:
            r.frame.x_mm = read_i16(bytes.data() + 2);
            r.frame.y_mm = read_i16(bytes.data() + 4);
            break;
        case FrameType::Error:
            r.frame.error_code = bytes[2];
            break;
        default:
            break;
    }
    return r;
}

Tensor FrameBuffer::take() {
    require_internal(!frames_.empty(), "take() on an empty frame buffer");
    Tensor f = std::move(frames_.front());
    frames_.erase(frames_.begin());
    return f;
}

void Calibration::validate() const {
    require(height > 0.0, "camera height must be positive");
    require(tilt > 0.0 && tilt < 1.5707963, "camera tilt must lie in (0, pi/2)");
    require(fov_h > 0.1 && fov_h < 3.0 && fov_v > 0.1 && fov_v < 3.0,
            "field of view must lie in (0.1, 3.0) rad");
    require(image_width >= 8 && image_height >= 8, "calibrated image must be at least 8x8");
}

double Calibration::focal_x() const { return (image_width / 2.0) / std::tan(fov_h / 2.0); }
double Calibration::focal_y() const { return (image_height / 2.0) / std::tan(fov_v / 2.0); }

std::pair<double, double> pixel_to_robot(double u, double v, const Calibration& calib) {
    calib.validate();
    require(std::isfinite(u) && std::isfinite(v), "pixel coordinates must be finite");
    const double cu = (calib.image_width - 1) / 2.0;
    const double cv = (calib.image_height - 1) / 2.0;
    // camera frame before tilt: +x along the optical axis, +y left, +z up
    const double yc = -(u - cu) / calib.focal_x();
    const double zc = -(v - cv) / calib.focal_y();
    const double st = std::sin(calib.tilt), ct = std::cos(calib.tilt);
    const double denom = st - ct * zc;  // -d_z of the world-frame ray
    require(denom > 1e-9, strfmt("pixel (%g, %g) does not intersect the ground plane", u, v));
    const double s = calib.height / denom;
    const double X = calib.offset_x + s * (ct + st * zc);
    const double Y = calib.offset_y + s * yc;
    return {X, Y};
}

std::pair<double, double> robot_to_pixel(double X, double Y, const Calibration& calib) {
    calib.validate();
    const double px = X - calib.offset_x;
    const double py = Y - calib.offset_y;
    const double pz = -calib.height;
    const double st = std::sin(calib.tilt), ct = std::cos(calib.tilt);
    const double xc = ct * px - st * pz;
    const double yc = py;
    const double zc = st * px + ct * pz;
    require(xc > 1e-9, strfmt("ground point (%g, %g) lies behind the camera", X, Y));
    const double cu = (calib.image_width - 1) / 2.0;
    const double cv = (calib.image_height - 1) / 2.0;
    return {cu - calib.focal_x() * yc / xc, cv - calib.focal_y() * zc / xc};
}

AcqFrame handle_request(const AcqFrame& request, const CameraSource& camera,
                        const DetectorFn& detector, const Calibration& calib, FrameBuffer& buffer,
                        const GridSpec& grid) {
    require(request.type == FrameType::PositionRequest,
            "handle_request expects a position request frame");
    struct Guard {
        FrameBuffer& b;
        ~Guard() { b.clear(); }
    } guard{buffer};

    auto frame = camera();
    if (!frame) return AcqFrame::error(kErrCameraTimeout);
    buffer.push(std::move(*frame));
    const Tensor image = buffer.take();
    const DetectionResult result = detector(image);

    double cx = 0.0, cy = 0.0;
    if (std::holds_alternative<Nothing>(result)) return AcqFrame::no_object();
    if (const auto* rough = std::get_if<RoughCell>(&result)) {
        cx = rough->cx;
        cy = rough->cy;
        require(rough->index >= 0 && rough->index < grid.n(),
                "rough cell index outside the grid");
    } else {
        const auto& box = std::get<FineBox>(result).box;
        cx = box.x;
        cy = box.y;
    }
    const double u = cx * calib.image_width - 0.5;
    const double v = cy * calib.image_height - 0.5;
    try {
        const auto [X, Y] = pixel_to_robot(u, v, calib);
        const auto mm = [](double m) {
            const double q = std::lround(m * 1000.0);
            return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
        };
        return AcqFrame::response(mm(X), mm(Y));
    } catch (const ValidationError&) {
        return AcqFrame::error(kErrNoGroundPoint);
    }
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Searching: return "searching";
        case Phase::Approaching: return "approaching";
        case Phase::Refining: return "refining";
        case Phase::Grasped: return "grasped";
    }
    return "?";
}

void SimWorld::validate() const {
    require(object_radius > 0.0 && object_radius < 1.0, "object radius must lie in (0,1) m");
    require(noise_sigma >= 0.0, "noise sigma must be non-negative");
}

namespace {

constexpr double kApproachStep = 0.05;  // m per step
constexpr double kRefineStep = 0.02;
constexpr double kMaxTurn = 0.2;  // rad per step
constexpr double kGraspLateral = 0.1;
constexpr double kGraspArea = 0.25;
constexpr double kOracleCloseArea = 0.20;
constexpr double kOracleMinPixels = 1.0;

// clip to the unit image; drops slivers thinner than a pixel
std::optional<SceneObject> clip_to_scene(const BoxTarget& box, int image_size) {
    const double min_side = 1.0 / image_size;
    const double x0 = std::max(box.x - box.w / 2, 0.0);
    const double x1 = std::min(box.x + box.w / 2, 1.0);
    const double y0 = std::max(box.y - box.h / 2, 0.0);
    const double y1 = std::min(box.y + box.h / 2, 1.0);
    if (x1 - x0 < min_side || y1 - y0 < min_side) return std::nullopt;
    SceneObject o;
    o.cx = (x0 + x1) / 2;
    o.cy = (y0 + y1) / 2;
    o.w = x1 - x0;
    o.h = y1 - y0;
    o.color = 0;
    return o;
}

bool in_view(const BoxTarget& box, const Calibration& calib) {
    if (box.x < 0.0 || box.x > 1.0 || box.y < 0.0 || box.y > 1.0) return false;
    return box.w * calib.image_width >= kOracleMinPixels;
}

// world background spec derived from the world seed
SceneSpec world_scene(const SimWorld& world) {
    Rng rng(derive_seed(world.seed, 0xACu));
    SceneSpec scene;
    scene.background = static_cast<BackgroundKind>(rng.uniform_int(kBackgroundKinds));
    scene.base_level = rng.uniform(0.15, 0.45);
    scene.alt_level = scene.base_level + rng.uniform(0.08, 0.20);
    scene.texture_period = 4 + static_cast<int>(rng.uniform_int(9));
    scene.orientation = static_cast<int>(rng.uniform_int(3));
    scene.noise_sigma = world.noise_sigma;
    return scene;
}

double object_distance(const SimWorld& world, const RobotPose& pose) {
    if (!world.has_object) return 0.0;
    return std::hypot(world.object_x - pose.x, world.object_y - pose.y);
}

}  // namespace

std::optional<BoxTarget> view_box(const SimWorld& world, const RobotPose& pose,
                                  const Calibration& calib) {
    if (!world.has_object) return std::nullopt;
    const double dx = world.object_x - pose.x;
    const double dy = world.object_y - pose.y;
    const double ch = std::cos(pose.heading), sh = std::sin(pose.heading);
    const double fx = ch * dx + sh * dy;  // robot frame, +x ahead
    const double fy = -sh * dx + ch * dy;

    const double px = fx - calib.offset_x;
    const double pz = -calib.height;
    const double st = std::sin(calib.tilt), ct = std::cos(calib.tilt);
    const double xc = ct * px - st * pz;
    if (xc <= 1e-6) return std::nullopt;
    const auto uv = robot_to_pixel(fx, fy, calib);
    BoxTarget box;
    box.x = (uv.first + 0.5) / calib.image_width;
    box.y = (uv.second + 0.5) / calib.image_height;
    box.w = calib.focal_x() * 2.0 * world.object_radius / xc / calib.image_width;
    box.h = calib.focal_y() * 2.0 * world.object_radius / xc / calib.image_height;
    return box;
}

DetectionResult oracle_detection(const SimWorld& world, const RobotPose& pose,
                                 const Calibration& calib, const GridSpec& grid) {
    const auto box = view_box(world, pose, calib);
    if (!box || !in_view(*box, calib)) return Nothing{};
    const double area = std::min(box->w, 1.0) * std::min(box->h, 1.0);
    const double cx = std::clamp(box->x, 0.0, 1.0);
    const double cy = std::clamp(box->y, 0.0, 1.0);
    if (area >= kOracleCloseArea) {
        return FineBox{BoxTarget{cx, cy, std::clamp(box->w, 0.01, 0.99),
                                 std::clamp(box->h, 0.01, 0.99)}};
    }
    const int cell = cell_index(cx, cy, grid);
    const auto center = grid.cell_center(cell);
    return RoughCell{cell, center.first, center.second};
}

Tensor render_view(const SimWorld& world, const RobotPose& pose, const Calibration& calib,
                   int step) {
    SceneSpec scene = world_scene(world);
    if (const auto view = view_box(world, pose, calib)) {
        if (auto obj = clip_to_scene(*view, calib.image_width)) scene.objects.push_back(*obj);
    }
    Rng render_rng(derive_seed(world.seed, 0xB000u + static_cast<std::uint64_t>(step)));
    return render(scene, render_rng, calib.image_width);
}

SimResult simulate_approach(const SimWorld& world, DetectorRef detector, const Calibration& calib,
                            int max_steps) {
    world.validate();
    calib.validate();
    require(max_steps >= 1, "simulation needs at least one step");
    Pipeline* pipeline = nullptr;
    if (auto** p = std::get_if<Pipeline*>(&detector)) {
        require(*p != nullptr, "pipeline detector must not be null");
        pipeline = *p;
    }
    const GridSpec grid = pipeline ? pipeline->system().config.grid : GridSpec{};

    SimResult sim;
    RobotPose pose = world.robot;
    Phase phase = Phase::Searching;
    FrameBuffer buffer;

    for (int step = 0; step < max_steps; ++step) {
        const Tensor image = render_view(world, pose, calib, step);

        DetectionResult result = Nothing{};
        const DetectorFn fn = [&](const Tensor& img) {
            result = pipeline ? pipeline->process_frame(img).first
                              : oracle_detection(world, pose, calib, grid);
            return result;
        };
        const CameraSource camera = [&]() -> std::optional<Tensor> { return image; };
        const AcqFrame response =
            handle_request(AcqFrame::request(), camera, fn, calib, buffer, grid);
        require_internal(buffer.empty(), "frame buffer left non-empty after a request");
        (void)response;

        const Situation verdict = result_situation(result);
        if (phase == Phase::Searching && verdict == Situation::FarObjects)
            phase = Phase::Approaching;
        if (phase != Phase::Grasped && verdict == Situation::CloseObject) phase = Phase::Refining;

        double turn = 0.0, advance = 0.0;
        bool grasped = false;
        switch (phase) {
            case Phase::Searching:
                turn = kMaxTurn;
                break;
            case Phase::Approaching:
                if (const auto* rough = std::get_if<RoughCell>(&result)) {
                    turn = std::clamp((0.5 - rough->cx) * calib.fov_h, -kMaxTurn, kMaxTurn);
                    advance = kApproachStep;
                } else {
                    turn = kMaxTurn;
                }
                break;
            case Phase::Refining:
                if (const auto* fine = std::get_if<FineBox>(&result)) {
                    const auto& b = fine->box;
                    if (std::abs(b.x - 0.5) <= kGraspLateral && b.w * b.h >= kGraspArea) {
                        grasped = true;
                    } else {
                        turn = std::clamp((0.5 - b.x) * calib.fov_h, -kMaxTurn, kMaxTurn);
                        advance = kRefineStep;
                    }
                } else if (const auto* rough = std::get_if<RoughCell>(&result)) {
                    turn = std::clamp((0.5 - rough->cx) * calib.fov_h, -kMaxTurn, kMaxTurn);
                    advance = kRefineStep;
                } else {
                    turn = kMaxTurn;
                }
                break;
            case Phase::Grasped:
                break;
        }
        if (grasped) phase = Phase::Grasped;

        sim.trajectory.push_back(TrajectoryPoint{step, phase, pose, verdict, result,
                                                 object_distance(world, pose)});
        if (phase == Phase::Grasped) break;

        pose.heading += turn;
        pose.x += advance * std::cos(pose.heading);
        pose.y += advance * std::sin(pose.heading);
    }

    sim.steps = static_cast<int>(sim.trajectory.size());
    sim.final_phase = phase;
    sim.final_distance = object_distance(world, pose);
    return sim;
}

std::string trajectory_csv(const SimResult& result) {
    std::ostringstream out;
    out << "step,phase,robot_x,robot_y,heading,verdict,cell,cx,cy,box_x,box_y,box_w,box_h,"
           "distance\n";
    for (const auto& p : result.trajectory) {
        out << p.step << ',' << phase_name(p.phase) << ',' << strfmt("%.6f", p.pose.x) << ','
            << strfmt("%.6f", p.pose.y) << ',' << strfmt("%.6f", p.pose.heading) << ','
            << situation_name(p.verdict) << ',';
        if (const auto* rough = std::get_if<RoughCell>(&p.result)) {
            out << rough->index << ',' << strfmt("%.4f", rough->cx) << ','
                << strfmt("%.4f", rough->cy) << ",,,,";
        } else if (const auto* fine = std::get_if<FineBox>(&p.result)) {
            out << ",,," << strfmt("%.4f", fine->box.x) << ',' << strfmt("%.4f", fine->box.y)
                << ',' << strfmt("%.4f", fine->box.w) << ',' << strfmt("%.4f", fine->box.h);
        } else {
            out << ",,,,,,";
        }
        out << ',' << strfmt("%.6f", p.distance) << '\n';
    }
    return out.str();
}

namespace {

bool read_exact(int fd, std::uint8_t* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::read(fd, out + got, n - got);
        if (r <= 0) return false;
        got += static_cast<std::size_t>(r);
    }
    return true;
}

bool write_all(int fd, const std::vector<std::uint8_t>& bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t r = ::write(fd, bytes.data() + sent, bytes.size() - sent);
        if (r <= 0) return false;
        sent += static_cast<std::size_t>(r);
    }
    return true;
}

}  // namespace

int serve_acquisition(int port, const CameraSource& camera, const DetectorFn& detector,
                      const Calibration& calib, int max_requests,
                      const std::function<void(int)>& on_ready) {
    require(port >= 0 && port <= 65535, "port must lie in [0, 65535]");
    const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    require(listener >= 0, "failed to create a listening socket");
    int one = 1;
    ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listener, 1) != 0) {
        ::close(listener);
        throw ValidationError(strfmt("failed to bind acquisition responder to port %d", port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
    if (on_ready) on_ready(ntohs(addr.sin_port));

    int served = 0;
    FrameBuffer buffer;
    while (max_requests < 0 || served < max_requests) {
        const int conn = ::accept(listener, nullptr, nullptr);
        if (conn < 0) break;
        for (;;) {
            std::vector<std::uint8_t> bytes(2);
            if (!read_exact(conn, bytes.data(), 2)) break;
            std::size_t rest = 1;
            if (bytes[0] == kFrameStart) {
                if (auto payload = payload_length(bytes[1])) rest = *payload + 1;
            }
            bytes.resize(2 + rest);
            if (!read_exact(conn, bytes.data() + 2, rest)) break;
            const DecodeResult decoded = decode_frame(bytes);
            AcqFrame reply;
            if (decoded.status != DecodeStatus::Ok ||
                decoded.frame.type != FrameType::PositionRequest) {
                reply = AcqFrame::error(kErrBadRequest);
            } else {
                reply = handle_request(decoded.frame, camera, detector, calib, buffer);
            }
            if (!write_all(conn, encode_frame(reply))) break;
            ++served;
            if (max_requests >= 0 && served >= max_requests) break;
        }
        ::close(conn);
    }
    ::close(listener);
    return served;
}

}  // namespace maod
