#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "maod/pipeline.hpp"
#include "maod/scenegen.hpp"

namespace maod {

enum class FrameType : std::uint8_t {
    PositionRequest = 0x01,
    PositionResponse = 0x02,
    NoObject = 0x03,
    Error = 0x0F,
};

constexpr std::uint8_t kFrameStart = 0xAA;

// error payload codes
constexpr std::uint8_t kErrCameraTimeout = 1;
constexpr std::uint8_t kErrNoGroundPoint = 2;
constexpr std::uint8_t kErrBadRequest = 3;

struct AcqFrame {
    FrameType type = FrameType::PositionRequest;
    std::int16_t x_mm = 0;  // position responses only
    std::int16_t y_mm = 0;
    std::uint8_t error_code = 0;  // error frames only

    static AcqFrame request() { return {FrameType::PositionRequest, 0, 0, 0}; }
    static AcqFrame no_object() { return {FrameType::NoObject, 0, 0, 0}; }
    static AcqFrame response(std::int16_t x, std::int16_t y) {
        return {FrameType::PositionResponse, x, y, 0};
    }
    static AcqFrame error(std::uint8_t code) { return {FrameType::Error, 0, 0, code}; }

    bool operator==(const AcqFrame&) const = default;
};

enum class DecodeStatus : int {
    Ok = 0,
    BadStart = 1,
    UnknownType = 2,
    ShortRead = 3,
    LengthMismatch = 4,
    BadChecksum = 5,
};

const char* decode_status_name(DecodeStatus s);

struct DecodeResult {
    DecodeStatus status = DecodeStatus::Ok;
    AcqFrame frame;
};

// wire size of a frame of the given type (start + type + payload + checksum)
std::size_t frame_length(FrameType type);

std::vector<std::uint8_t> encode_frame(const AcqFrame& frame);
DecodeResult decode_frame(const std::vector<std::uint8_t>& bytes);

/// Staging area for frames pulled off the camera stream. The acquisition
/// contract requires it to be empty again after every request.
class FrameBuffer {
public:
    void push(Tensor frame) { frames_.push_back(std::move(frame)); }
    bool empty() const { return frames_.empty(); }
    std::size_t size() const { return frames_.size(); }
    void clear() { frames_.clear(); }
    Tensor take();

private:
    std::vector<Tensor> frames_;
};

struct Calibration {
    double height = 0.05;          // camera above the ground plane (m)
    double tilt = 0.7853981633974483;  // pitch below horizontal (rad)
    double fov_h = 1.745;          // horizontal field of view (rad)
    double fov_v = 1.745;
    int image_width = 64;
    int image_height = 64;
    double offset_x = 0.0;  // camera position in the robot frame (m)
    double offset_y = 0.0;

    static Calibration defaults() { return {}; }
    void validate() const;
    double focal_x() const;  // pixels
    double focal_y() const;
};

// Ray through pixel (u, v) cast onto the ground plane; (u, v) are continuous
// pixel coordinates with the image center at ((W-1)/2, (H-1)/2). Pixels at or
// above the horizon are rejected.
std::pair<double, double> pixel_to_robot(double u, double v, const Calibration& calib);
// forward pinhole projection of a ground point in the robot frame; points
// behind the camera are rejected
std::pair<double, double> robot_to_pixel(double X, double Y, const Calibration& calib);

using CameraSource = std::function<std::optional<Tensor>()>;
using DetectorFn = std::function<DetectionResult(const Tensor&)>;

/// Full acquisition cycle: pull a frame through the buffer, detect, solve the
/// detected image position into robot coordinates. The buffer is empty on
/// every exit path, including thrown exceptions.
AcqFrame handle_request(const AcqFrame& request, const CameraSource& camera,
                        const DetectorFn& detector, const Calibration& calib, FrameBuffer& buffer,
                        const GridSpec& grid = GridSpec{});

enum class Phase : int { Searching = 0, Approaching = 1, Refining = 2, Grasped = 3 };

const char* phase_name(Phase p);

struct RobotPose {
    double x = 0.0, y = 0.0, heading = 0.0;
};

struct SimWorld {
    RobotPose robot;
    bool has_object = true;
    double object_x = 2.0;
    double object_y = 1.0;
    double object_radius = 0.04;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;  // background texture draw

    void validate() const;
};

struct TrajectoryPoint {
    int step = 0;
    Phase phase = Phase::Searching;
    RobotPose pose;
    Situation verdict = Situation::NoObject;
    DetectionResult result;
    double distance = 0.0;  // robot to object; 0 when the world has none
};

struct SimResult {
    std::vector<TrajectoryPoint> trajectory;
    Phase final_phase = Phase::Searching;
    double final_distance = 0.0;
    int steps = 0;
};

// object footprint in the camera image from the given pose (unclipped), if it
// projects in front of the camera at all
std::optional<BoxTarget> view_box(const SimWorld& world, const RobotPose& pose,
                                  const Calibration& calib);

// ground-truth detection for that view, mimicking a perfect detector
DetectionResult oracle_detection(const SimWorld& world, const RobotPose& pose,
                                 const Calibration& calib, const GridSpec& grid);

// camera image of the world from the given pose; step seeds the noise draw
Tensor render_view(const SimWorld& world, const RobotPose& pose, const Calibration& calib,
                   int step = 0);

struct OracleDetector {};  // detection from ground-truth geometry

using DetectorRef = std::variant<OracleDetector, Pipeline*>;

/// Closed loop: render the robot's view, request a detection through the
/// byte protocol, steer and advance until the grasp condition holds or the
/// step budget runs out. Grasp: box center within 0.1 laterally of image
/// center and box area >= 0.25.
SimResult simulate_approach(const SimWorld& world, DetectorRef detector, const Calibration& calib,
                            int max_steps);

std::string trajectory_csv(const SimResult& result);

/// Serves the byte protocol on a local TCP socket (port 0 picks one; the
/// bound port is reported through on_ready). Returns the number of requests
/// served; stops after max_requests (or client disconnect when negative).
int serve_acquisition(int port, const CameraSource& camera, const DetectorFn& detector,
                      const Calibration& calib, int max_requests,
                      const std::function<void(int)>& on_ready = {});

}  // namespace maod
