//! Bins a synthetic event stream into pseudo-frames at 30 fps and writes
//! the renders.
//!
//! `cargo run --example event_frames -- /tmp/frames`

use nerdd::dataset::{synthetic_recording, SyntheticOptions};
use nerdd::events::{accumulate, render_frame, AccumulationConfig, Event, EventStream, Polarity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1);
    let cfg = AccumulationConfig::from_fps(30)?;
    println!("30 fps -> {} us per frame", cfg.interval_us());

    // boundary event: t = Δt starts the second frame
    let edge = EventStream::new(4, 4, vec![Event::new(33_332, 0, 0, Polarity::On), Event::new(33_333, 1, 1, Polarity::Off)])?;
    let acc = accumulate(&edge, &cfg, 66_666);
    println!("t=33332 -> frame 0 ({} events), t=33333 -> frame 1 ({} events)", acc.frames[0].event_count(), acc.frames[1].event_count());

    let rec = synthetic_recording("demo", &SyntheticOptions::default())?;
    let stream = &rec.stream;
    let duration = rec.manifest.frames as u64 * cfg.interval_us();
    let acc = accumulate(stream, &cfg, duration);
    let st = stream.stats();
    println!("{} events ({} on / {} off) over {} frames, {} dropped", st.events, st.on, st.off, acc.frames.len(), acc.report.dropped());
    let binned: u64 = acc.frames.iter().map(|f| f.event_count()).sum();
    assert_eq!(binned + acc.report.dropped(), st.events);
    for f in acc.frames.iter().take(3) {
        println!("frame {:2}: {} events", f.index, f.event_count());
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        for f in &acc.frames {
            render_frame(f).save(format!("{dir}/{:06}.png", f.index))?;
        }
        println!("renders in {dir}");
    }
    Ok(())
}
