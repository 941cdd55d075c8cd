//! Every wire message survives encode then decode unchanged.

use magbot_core::simulator::{Actuator, BoundaryReason, EventKind, Part, SimEvent, TorqueDemand};
use magbot_gateway::protocol::*;
use proptest::prelude::*;

fn real() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1.0..1.0f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE)
    ]
}

fn name() -> impl Strategy<Value = String> {
    "[a-z_]{1,12}"
}

fn part() -> impl Strategy<Value = Part> {
    prop_oneof![Just(Part::Back), Just(Part::Front)]
}

fn event() -> impl Strategy<Value = SimEvent> {
    let kind = prop_oneof![
        (real(), real()).prop_map(|(margin, threshold)| EventKind::FallRisk { margin, threshold }),
        Just(EventKind::FallRisk {
            margin: f64::INFINITY,
            threshold: 5.0
        }),
        (part(), real(), real()).prop_map(|(wheel, demand, capacity)| {
            EventKind::TorqueSaturation {
                actuator: Actuator::Servo,
                wheel,
                demand,
                capacity,
            }
        }),
        (part(), real(), real()).prop_map(|(wheel, commanded, limit)| EventKind::SteerSaturation {
            wheel,
            commanded,
            limit
        }),
        real().prop_map(|residual| EventKind::Slip { residual }),
        (part(), name(), name(), name()).prop_map(|(wheel, joint, from, to)| {
            EventKind::JointTransition {
                wheel,
                joint,
                from,
                to,
            }
        }),
        (part(), name()).prop_map(|(part, patch)| EventKind::Boundary {
            reason: BoundaryReason::FreeEdge,
            part,
            patch,
            side: None
        }),
        (0usize..1_000_000).prop_map(|steps| EventKind::Completed { steps }),
    ];
    (real(), kind).prop_map(|(time, kind)| SimEvent { time, kind })
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Driver), Just(Role::Observer)]
}

fn hello() -> impl Strategy<Value = Message> {
    let info = (
        real(),
        real(),
        real(),
        real(),
        prop::collection::vec(name(), 0..4),
    )
        .prop_map(
            |(dt, telemetry_hz, v_max, max_angle_deg, patches)| ServerInfo {
                dt,
                telemetry_hz,
                v_max,
                max_angle_deg,
                patches,
            },
        );
    (
        any::<u32>(),
        role(),
        prop::option::of(any::<u64>()),
        prop::option::of(info),
    )
        .prop_map(|(version, role, session, server)| {
            Message::Hello(Hello {
                version,
                role,
                session,
                server,
            })
        })
}

fn command() -> impl Strategy<Value = Message> {
    (
        any::<u64>(),
        any::<u8>(),
        real(),
        real(),
        real(),
        prop::option::of(real()),
    )
        .prop_map(
            |(seq, mode, delta_front_deg, delta_back_deg, v_back, v_front)| {
                Message::Command(CommandMessage {
                    seq,
                    mode,
                    delta_front_deg,
                    delta_back_deg,
                    v_back,
                    v_front,
                })
            },
        )
}

fn control() -> impl Strategy<Value = Message> {
    let verb = prop_oneof![
        Just(ControlVerb::Pause),
        Just(ControlVerb::Resume),
        Just(ControlVerb::Reset)
    ];
    (any::<u64>(), verb).prop_map(|(seq, verb)| Message::Control(ControlMessage { seq, verb }))
}

fn telemetry() -> impl Strategy<Value = Message> {
    let pose = (
        name(),
        [real(), real(), real(), real(), real(), real(), real()],
    )
        .prop_map(|(patch, [u, v, heading, roll, x, y, z])| TelemetryPose {
            patch,
            u,
            v,
            heading,
            roll,
            x,
            y,
            z,
        });
    let torque = [real(), real(), real(), real()].prop_map(
        |[motor_back, motor_front, servo_back, servo_front]| TorqueDemand {
            motor_back,
            motor_front,
            servo_back,
            servo_front,
        },
    );
    (
        (real(), any::<u64>(), any::<bool>(), pose),
        [real(), real(), real(), real()],
        (
            prop::option::of(real()),
            torque,
            prop::collection::vec(event(), 0..4),
        ),
        (0usize..1000, prop::option::of(any::<u64>())),
    )
        .prop_map(
            |(
                (time, step, paused, pose),
                [delta_front_deg, delta_back_deg, v_back, v_front],
                (margin, torque, events),
                (markers, applied_seq),
            )| {
                Message::Telemetry(Box::new(TelemetryMessage {
                    time,
                    step,
                    paused,
                    pose,
                    delta_front_deg,
                    delta_back_deg,
                    v_back,
                    v_front,
                    margin,
                    torque,
                    events,
                    markers,
                    applied_seq,
                }))
            },
        )
}

fn error() -> impl Strategy<Value = Message> {
    let code = prop_oneof![
        Just(ErrorCode::Malformed),
        Just(ErrorCode::OutOfRange),
        Just(ErrorCode::InvalidMode),
        Just(ErrorCode::StaleSeq),
        Just(ErrorCode::NotDriver),
        Just(ErrorCode::DriverTaken),
        Just(ErrorCode::Version),
        Just(ErrorCode::NoSession),
        Just(ErrorCode::Simulation),
    ];
    let severity = prop_oneof![Just(Severity::Error), Just(Severity::Warning)];
    (
        code,
        severity,
        prop::option::of(any::<u64>()),
        prop::option::of(name()),
        ".{0,40}",
    )
        .prop_map(|(code, severity, seq, field, message)| {
            Message::Error(ErrorMessage {
                code,
                severity,
                seq,
                field,
                message,
            })
        })
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        hello(),
        command(),
        control(),
        telemetry(),
        event().prop_map(|event| Message::Event(EventMessage { event })),
        any::<u64>().prop_map(|seq| Message::Ack(Ack { seq })),
        error(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_inverts_encode(m in message()) {
        let text = m.encode();
        prop_assert_eq!(Message::decode(&text).unwrap(), m, "{}", text);
    }

    #[test]
    fn frames_are_tagged_objects(m in message()) {
        let v: serde_json::Value = serde_json::from_str(&m.encode()).unwrap();
        let tag = v["type"].as_str().unwrap().to_string();
        prop_assert!(["hello", "command", "control", "telemetry", "event", "ack", "error"].contains(&tag.as_str()));
    }
}
