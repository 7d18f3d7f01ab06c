#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <thread>

#include "maod/acquisition.hpp"

using namespace maod;

namespace {

const double kPi = std::acos(-1.0);

Calibration tall_rig() {
    Calibration c = Calibration::defaults();
    c.height = 1.0;
    c.tilt = kPi / 4.0;
    return c;
}

Tensor gray_frame(double level = 0.5) { return Tensor(Shape{3, 64, 64}, level); }

CameraSource camera_of(Tensor frame) {
    return [frame = std::move(frame)]() -> std::optional<Tensor> { return frame; };
}

DetectorFn constant_detector(DetectionResult result) {
    return [result](const Tensor&) { return result; };
}

// detection whose image-plane center lands exactly on pixel (u, v)
FineBox box_at_pixel(double u, double v, const Calibration& calib) {
    return FineBox{BoxTarget{(u + 0.5) / calib.image_width, (v + 0.5) / calib.image_height,
                             0.3, 0.3}};
}

}  // namespace

TEST_CASE("position request encodes to AA 01 AB") {
    const std::vector<std::uint8_t> bytes = encode_frame(AcqFrame::request());
    REQUIRE(bytes.size() == 3);
    CHECK(bytes[0] == 0xAA);
    CHECK(bytes[1] == 0x01);
    CHECK(bytes[2] == 0xAB);
}

TEST_CASE("wire lengths are fixed per frame type") {
    CHECK(frame_length(FrameType::PositionRequest) == 3);
    CHECK(frame_length(FrameType::PositionResponse) == 7);
    CHECK(frame_length(FrameType::NoObject) == 3);
    CHECK(frame_length(FrameType::Error) == 4);
}

TEST_CASE("response payload is little-endian signed millimeters") {
    const auto bytes = encode_frame(AcqFrame::response(0x0102, -2));
    REQUIRE(bytes.size() == 7);
    CHECK(bytes[1] == 0x02);
    CHECK(bytes[2] == 0x02);  // x low byte first
    CHECK(bytes[3] == 0x01);
    CHECK(bytes[4] == 0xFE);  // -2 = 0xFFFE
    CHECK(bytes[5] == 0xFF);
    std::uint8_t xorsum = 0;
    for (std::size_t i = 0; i + 1 < bytes.size(); ++i) xorsum ^= bytes[i];
    CHECK(bytes[6] == xorsum);
}

TEST_CASE("decode inverts encode for every frame type") {
    const AcqFrame frames[] = {
        AcqFrame::request(),
        AcqFrame::no_object(),
        AcqFrame::response(0, 0),
        AcqFrame::response(1000, -1000),
        AcqFrame::response(-32768, 32767),
        AcqFrame::error(kErrCameraTimeout),
        AcqFrame::error(kErrNoGroundPoint),
        AcqFrame::error(255),
    };
    for (const AcqFrame& f : frames) {
        const DecodeResult r = decode_frame(encode_frame(f));
        CHECK(r.status == DecodeStatus::Ok);
        CHECK(r.frame == f);
    }
}

TEST_CASE("decode inverts encode across random responses") {
    Rng rng(77);
    for (int t = 0; t < 200; ++t) {
        const auto x = static_cast<std::int16_t>(rng.uniform_int(65536) - 32768);
        const auto y = static_cast<std::int16_t>(rng.uniform_int(65536) - 32768);
        const AcqFrame f = AcqFrame::response(x, y);
        const DecodeResult r = decode_frame(encode_frame(f));
        REQUIRE(r.status == DecodeStatus::Ok);
        CHECK(r.frame == f);
    }
}

TEST_CASE("decode reports distinct statuses in a fixed order") {
    CHECK(decode_frame({}).status == DecodeStatus::ShortRead);
    CHECK(decode_frame({0x55, 0x01, 0xAB}).status == DecodeStatus::BadStart);
    CHECK(decode_frame({0xAA}).status == DecodeStatus::ShortRead);
    CHECK(decode_frame({0xAA, 0x00, 0x00}).status == DecodeStatus::UnknownType);
    CHECK(decode_frame({0xAA, 0x07}).status == DecodeStatus::UnknownType);
    CHECK(decode_frame({0xAA, 0x02, 0x01}).status == DecodeStatus::ShortRead);
    CHECK(decode_frame({0xAA, 0x01, 0xAB, 0x00}).status == DecodeStatus::LengthMismatch);
    CHECK(decode_frame({0xAA, 0x01, 0xAC}).status == DecodeStatus::BadChecksum);

    CHECK(std::string(decode_status_name(DecodeStatus::Ok)) == "ok");
    CHECK(std::string(decode_status_name(DecodeStatus::BadStart)) == "bad_start");
    CHECK(std::string(decode_status_name(DecodeStatus::UnknownType)) == "unknown_type");
    CHECK(std::string(decode_status_name(DecodeStatus::ShortRead)) == "short_read");
    CHECK(std::string(decode_status_name(DecodeStatus::LengthMismatch)) == "length_mismatch");
    CHECK(std::string(decode_status_name(DecodeStatus::BadChecksum)) == "bad_checksum");
}

TEST_CASE("every single-bit corruption is detected, exhaustively per type") {
    const AcqFrame frames[] = {
        AcqFrame::request(),
        AcqFrame::no_object(),
        AcqFrame::response(4660, -19),
        AcqFrame::error(kErrBadRequest),
    };
    for (const AcqFrame& f : frames) {
        const auto clean = encode_frame(f);
        REQUIRE(decode_frame(clean).status == DecodeStatus::Ok);
        for (std::size_t i = 0; i < clean.size(); ++i) {
            for (int bit = 0; bit < 8; ++bit) {
                auto bytes = clean;
                bytes[i] ^= static_cast<std::uint8_t>(1u << bit);
                CHECK(decode_frame(bytes).status != DecodeStatus::Ok);
            }
        }
    }
}

TEST_CASE("frame buffer hands frames out in arrival order") {
    FrameBuffer buffer;
    CHECK(buffer.empty());
    CHECK(buffer.size() == 0);
    buffer.push(Tensor(Shape{1}, 1.0));
    buffer.push(Tensor(Shape{1}, 2.0));
    CHECK(buffer.size() == 2);
    CHECK(buffer.take().vec()[0] == 1.0);
    CHECK(buffer.size() == 1);
    buffer.clear();
    CHECK(buffer.empty());
    CHECK_THROWS_AS(buffer.take(), InternalError);
}

TEST_CASE("calibration validation bounds the rig") {
    CHECK_NOTHROW(Calibration::defaults().validate());

    Calibration c = Calibration::defaults();
    c.height = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = Calibration::defaults();
    c.tilt = 0.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("tilt"), ValidationError);
    c = Calibration::defaults();
    c.tilt = kPi / 2.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = Calibration::defaults();
    c.fov_h = 0.05;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = Calibration::defaults();
    c.fov_v = 3.5;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = Calibration::defaults();
    c.image_width = 4;
    CHECK_THROWS_AS(c.validate(), ValidationError);

    const Calibration d = Calibration::defaults();
    CHECK(d.focal_x() == doctest::Approx(32.0 / std::tan(d.fov_h / 2.0)).epsilon(1e-12));
}

TEST_CASE("center pixel at 45 degree tilt and 1 m height lands 1 m ahead") {
    const Calibration calib = tall_rig();
    const auto [X, Y] = pixel_to_robot(31.5, 31.5, calib);
    CHECK(X == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(Y == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("camera offsets shift the solved point rigidly") {
    Calibration calib = tall_rig();
    calib.offset_x = 0.25;
    calib.offset_y = -0.1;
    const auto [X, Y] = pixel_to_robot(31.5, 31.5, calib);
    CHECK(X == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(Y == doctest::Approx(-0.1).epsilon(1e-12));
}

TEST_CASE("left and right edge pixels solve to mirrored lateral offsets") {
    const Calibration calib = tall_rig();
    const auto left = pixel_to_robot(0.0, 40.0, calib);
    const auto right = pixel_to_robot(63.0, 40.0, calib);
    CHECK(left.first == doctest::Approx(right.first).epsilon(1e-12));
    CHECK(left.second == doctest::Approx(-right.second).epsilon(1e-12));
    CHECK(left.second > 0.0);
}

TEST_CASE("rays at or above the horizon are rejected") {
    const Calibration calib = Calibration::defaults();
    CHECK_THROWS_WITH_AS(pixel_to_robot(31.5, 0.0, calib),
                         doctest::Contains("does not intersect"), ValidationError);

    Calibration flat = Calibration::defaults();
    flat.tilt = 1e-10;
    CHECK_THROWS_WITH_AS(pixel_to_robot(31.5, 31.5, flat),
                         doctest::Contains("does not intersect"), ValidationError);

    flat.tilt = 0.0;
    CHECK_THROWS_AS(pixel_to_robot(31.5, 31.5, flat), ValidationError);
    const double nan = std::nan("");
    CHECK_THROWS_AS(pixel_to_robot(nan, 31.5, calib), ValidationError);
}

TEST_CASE("forward projection and ray casting invert each other") {
    const Calibration calib = Calibration::defaults();
    Rng rng(31);
    for (int t = 0; t < 1000; ++t) {
        const double u = rng.uniform(0.0, 63.0);
        const double v = rng.uniform(6.0, 63.0);
        const auto [X, Y] = pixel_to_robot(u, v, calib);
        const auto [u2, v2] = robot_to_pixel(X, Y, calib);
        CHECK(std::abs(u2 - u) < 1e-9);
        CHECK(std::abs(v2 - v) < 1e-9);
        const auto [X2, Y2] = pixel_to_robot(u2, v2, calib);
        CHECK(std::hypot(X2 - X, Y2 - Y) <= 1e-6);
    }
    CHECK_THROWS_WITH_AS(robot_to_pixel(-1.0, 0.0, calib), doctest::Contains("behind"),
                         ValidationError);
}

TEST_CASE("no-object detections answer with frame type 03") {
    FrameBuffer buffer;
    const AcqFrame reply = handle_request(AcqFrame::request(), camera_of(gray_frame()),
                                          constant_detector(Nothing{}),
                                          Calibration::defaults(), buffer);
    CHECK(reply == AcqFrame::no_object());
    CHECK(buffer.empty());
}

TEST_CASE("solved response matches the true ground point within 5 mm") {
    const Calibration calib = tall_rig();
    const double true_x = 0.8, true_y = 0.1;
    const auto [u, v] = robot_to_pixel(true_x, true_y, calib);

    FrameBuffer buffer;
    const AcqFrame reply = handle_request(AcqFrame::request(), camera_of(gray_frame()),
                                          constant_detector(box_at_pixel(u, v, calib)),
                                          calib, buffer);
    REQUIRE(reply.type == FrameType::PositionResponse);
    CHECK(std::abs(reply.x_mm - 800) <= 5);
    CHECK(std::abs(reply.y_mm - 100) <= 5);
    CHECK(buffer.empty());
}

TEST_CASE("rough detections solve through the cell center") {
    const Calibration calib = tall_rig();
    const GridSpec grid;
    const auto center = grid.cell_center(14);
    const RoughCell rough{14, center.first, center.second};

    const double u = center.first * calib.image_width - 0.5;
    const double v = center.second * calib.image_height - 0.5;
    const auto [X, Y] = pixel_to_robot(u, v, calib);

    FrameBuffer buffer;
    const AcqFrame reply = handle_request(AcqFrame::request(), camera_of(gray_frame()),
                                          constant_detector(rough), calib, buffer, grid);
    REQUIRE(reply.type == FrameType::PositionResponse);
    CHECK(reply.x_mm == static_cast<std::int16_t>(std::lround(X * 1000.0)));
    CHECK(reply.y_mm == static_cast<std::int16_t>(std::lround(Y * 1000.0)));
    CHECK(buffer.empty());
}

TEST_CASE("camera timeouts answer with error code 1") {
    FrameBuffer buffer;
    const CameraSource silent = []() -> std::optional<Tensor> { return std::nullopt; };
    const AcqFrame reply = handle_request(AcqFrame::request(), silent,
                                          constant_detector(Nothing{}),
                                          Calibration::defaults(), buffer);
    CHECK(reply == AcqFrame::error(kErrCameraTimeout));
    CHECK(buffer.empty());
}

TEST_CASE("detections above the horizon answer with error code 2") {
    FrameBuffer buffer;
    const FineBox sky{BoxTarget{0.5, 0.02, 0.1, 0.1}};
    const AcqFrame reply = handle_request(AcqFrame::request(), camera_of(gray_frame()),
                                          constant_detector(sky), Calibration::defaults(),
                                          buffer);
    CHECK(reply == AcqFrame::error(kErrNoGroundPoint));
    CHECK(buffer.empty());
}

TEST_CASE("the buffer is cleared even when the detector throws") {
    FrameBuffer buffer;
    const DetectorFn broken = [](const Tensor&) -> DetectionResult {
        throw std::runtime_error("detector fault");
    };
    CHECK_THROWS_AS(handle_request(AcqFrame::request(), camera_of(gray_frame()), broken,
                                   Calibration::defaults(), buffer),
                    std::runtime_error);
    CHECK(buffer.empty());
}

TEST_CASE("malformed requests and cells are rejected") {
    FrameBuffer buffer;
    CHECK_THROWS_AS(handle_request(AcqFrame::no_object(), camera_of(gray_frame()),
                                   constant_detector(Nothing{}), Calibration::defaults(),
                                   buffer),
                    ValidationError);
    const RoughCell bogus{99, 0.5, 0.5};
    CHECK_THROWS_WITH_AS(handle_request(AcqFrame::request(), camera_of(gray_frame()),
                                        constant_detector(bogus), Calibration::defaults(),
                                        buffer),
                         doctest::Contains("grid"), ValidationError);
    CHECK(buffer.empty());
}

TEST_CASE("oracle detection tracks apparent object size") {
    const Calibration calib = Calibration::defaults();
    const GridSpec grid;
    SimWorld world;
    const RobotPose origin;

    world.object_x = 2.0;
    world.object_y = 1.0;
    const DetectionResult far = oracle_detection(world, origin, calib, grid);
    REQUIRE(std::holds_alternative<RoughCell>(far));
    const auto box = view_box(world, origin, calib);
    REQUIRE(box.has_value());
    CHECK(std::get<RoughCell>(far).index == cell_index(box->x, box->y, grid));

    world.object_x = 0.05;
    world.object_y = 0.0;
    const DetectionResult close = oracle_detection(world, origin, calib, grid);
    REQUIRE(std::holds_alternative<FineBox>(close));
    CHECK(std::get<FineBox>(close).box.x == doctest::Approx(0.5).epsilon(1e-6));

    world.object_x = -1.0;
    const DetectionResult behind = oracle_detection(world, origin, calib, grid);
    CHECK(std::holds_alternative<Nothing>(behind));

    world.has_object = false;
    CHECK(std::holds_alternative<Nothing>(oracle_detection(world, origin, calib, grid)));
    CHECK_FALSE(view_box(world, origin, calib).has_value());
}

TEST_CASE("rendered views embed the projected object") {
    SimWorld world;
    world.object_x = 0.3;
    world.object_y = 0.0;
    const Calibration calib = Calibration::defaults();
    const Tensor view = render_view(world, RobotPose{}, calib);
    CHECK(view.shape() == Shape{3, 64, 64});

    SimWorld bare = world;
    bare.has_object = false;
    const Tensor empty_view = render_view(bare, RobotPose{}, calib);
    double diff = 0.0;
    for (std::size_t i = 0; i < view.numel(); ++i)
        diff += std::abs(view.vec()[i] - empty_view.vec()[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("oracle guidance grasps the default object inside the budget") {
    const SimWorld world;
    const SimResult sim = simulate_approach(world, OracleDetector{}, Calibration::defaults(), 200);
    CHECK(sim.final_phase == Phase::Grasped);
    CHECK(sim.steps <= 200);
    CHECK(sim.final_distance <= 0.05);
    CHECK(sim.trajectory.size() == static_cast<std::size_t>(sim.steps));

    int first_approach = -1;
    for (std::size_t i = 0; i < sim.trajectory.size(); ++i) {
        const auto& p = sim.trajectory[i];
        CHECK(p.step == static_cast<int>(i));
        if (i > 0) CHECK(static_cast<int>(p.phase) >= static_cast<int>(sim.trajectory[i - 1].phase));
        if (first_approach < 0 && p.phase == Phase::Approaching)
            first_approach = static_cast<int>(i);
    }
    REQUIRE(first_approach >= 0);
    for (std::size_t i = first_approach + 1; i < sim.trajectory.size(); ++i)
        CHECK(sim.trajectory[i].distance <= sim.trajectory[i - 1].distance + 1e-9);
}

TEST_CASE("a world without an object never leaves the search phase") {
    SimWorld world;
    world.has_object = false;
    const SimResult sim = simulate_approach(world, OracleDetector{}, Calibration::defaults(), 40);
    CHECK(sim.final_phase == Phase::Searching);
    CHECK(sim.steps == 40);
    CHECK(sim.final_distance == 0.0);
    for (const auto& p : sim.trajectory) {
        CHECK(p.phase == Phase::Searching);
        CHECK(p.verdict == Situation::NoObject);
    }
}

TEST_CASE("distance to a dead-ahead object shrinks every approaching step") {
    SimWorld world;
    world.object_x = 1.5;
    world.object_y = 0.0;
    const SimResult sim = simulate_approach(world, OracleDetector{}, Calibration::defaults(), 200);
    CHECK(sim.final_phase == Phase::Grasped);
    int approach_steps = 0;
    for (std::size_t i = 0; i + 1 < sim.trajectory.size(); ++i) {
        if (sim.trajectory[i].phase != Phase::Approaching) continue;
        ++approach_steps;
        CHECK(sim.trajectory[i + 1].distance < sim.trajectory[i].distance);
    }
    CHECK(approach_steps > 0);
}

TEST_CASE("the simulation replays identically") {
    SimWorld world;
    world.noise_sigma = 0.01;
    world.seed = 9;
    const SimResult a = simulate_approach(world, OracleDetector{}, Calibration::defaults(), 150);
    const SimResult b = simulate_approach(world, OracleDetector{}, Calibration::defaults(), 150);
    CHECK(trajectory_csv(a) == trajectory_csv(b));
    CHECK(a.steps == b.steps);
    CHECK(a.final_phase == b.final_phase);
}

TEST_CASE("simulation inputs are validated") {
    SimWorld world;
    CHECK_THROWS_AS(simulate_approach(world, OracleDetector{}, Calibration::defaults(), 0),
                    ValidationError);
    world.object_radius = 0.0;
    CHECK_THROWS_AS(simulate_approach(world, OracleDetector{}, Calibration::defaults(), 10),
                    ValidationError);
    CHECK_THROWS_AS(simulate_approach(SimWorld{}, static_cast<Pipeline*>(nullptr),
                                      Calibration::defaults(), 10),
                    ValidationError);
}

TEST_CASE("trajectory logs carry one row per step") {
    const SimResult sim = simulate_approach(SimWorld{}, OracleDetector{},
                                            Calibration::defaults(), 200);
    const std::string csv = trajectory_csv(sim);
    const std::string header =
        "step,phase,robot_x,robot_y,heading,verdict,cell,cx,cy,box_x,box_y,box_w,box_h,"
        "distance\n";
    REQUIRE(csv.substr(0, header.size()) == header);

    std::size_t lines = 0;
    std::size_t start = 0;
    while (start < csv.size()) {
        const std::size_t end = csv.find('\n', start);
        REQUIRE(end != std::string::npos);
        const std::string line = csv.substr(start, end - start);
        CHECK(std::count(line.begin(), line.end(), ',') == 13);
        ++lines;
        start = end + 1;
    }
    CHECK(lines == static_cast<std::size_t>(sim.steps) + 1);
    CHECK(csv.find("grasped") != std::string::npos);
    CHECK(csv.substr(header.size(), 2) == "0,");
}

TEST_CASE("the socket responder speaks the byte protocol") {
    std::promise<int> port_promise;
    auto port_future = port_promise.get_future();
    std::thread server([&] {
        serve_acquisition(0, camera_of(gray_frame()), constant_detector(Nothing{}),
                          Calibration::defaults(), 3,
                          [&](int port) { port_promise.set_value(port); });
    });
    const int port = port_future.get();
    REQUIRE(port > 0);

    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);

    const auto exchange = [&](const std::vector<std::uint8_t>& out, std::size_t reply_len) {
        std::size_t sent = 0;
        while (sent < out.size()) {
            const ssize_t w = ::write(fd, out.data() + sent, out.size() - sent);
            REQUIRE(w > 0);
            sent += static_cast<std::size_t>(w);
        }
        std::vector<std::uint8_t> in(reply_len);
        std::size_t got = 0;
        while (got < reply_len) {
            const ssize_t r = ::read(fd, in.data() + got, reply_len - got);
            REQUIRE(r > 0);
            got += static_cast<std::size_t>(r);
        }
        return decode_frame(in);
    };

    const DecodeResult ok = exchange(encode_frame(AcqFrame::request()), 3);
    CHECK(ok.status == DecodeStatus::Ok);
    CHECK(ok.frame == AcqFrame::no_object());

    const DecodeResult rejected = exchange({0xAA, 0x01, 0xAC}, 4);
    CHECK(rejected.status == DecodeStatus::Ok);
    CHECK(rejected.frame == AcqFrame::error(kErrBadRequest));

    const DecodeResult wrong_type = exchange(encode_frame(AcqFrame::no_object()), 4);
    CHECK(wrong_type.status == DecodeStatus::Ok);
    CHECK(wrong_type.frame == AcqFrame::error(kErrBadRequest));

    ::close(fd);
    server.join();
}
