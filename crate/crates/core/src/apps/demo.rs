//! A ready-made set of demo content built through the bundles' own scripts.

use std::io::Cursor;
use std::sync::Arc;

use image::{ImageBuffer, ImageFormat, Rgb};

use super::{board, peoplefinder, photos, text_form, FixtureBuilder};
use crate::keys::{Identity, KeyRecord};
use crate::message::{Message, DEFAULT_TTL};
use crate::sandbox::{FormValue, FormValues, Sandbox, SandboxError};

/// Number of messages returned by [`demo_messages`].
pub const DEMO_COUNT: usize = 20;

fn picture(w: u32, h: u32, hue: u8) -> Vec<u8> {
    let img = ImageBuffer::from_fn(w, h, |x, y| Rgb([hue, (x * 255 / w) as u8, (y * 255 / h) as u8]));
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding");
    out.into_inner()
}

/// Twenty signed messages created at `now` onwards: the three app templates,
/// photos, board posts with a reply, two PeopleFinder records with notes,
/// and the author's key record.
pub fn demo_messages(sandbox: &Sandbox, identity: &Identity, now: u64) -> Result<Vec<Arc<Message>>, SandboxError> {
    let mut out = Vec::with_capacity(DEMO_COUNT);

    let mut ph = FixtureBuilder::new(&photos(), sandbox.clone(), identity.clone(), now);
    for (i, caption) in ["harbour at dawn", "market square", "ferry queue", "rain on the bridge", "night shift"].iter().enumerate() {
        let mut form = FormValues::new();
        let data = picture(320 + 40 * i as u32, 240, 60 * i as u8);
        form.insert("photo".into(), FormValue::File { filename: format!("img{i}.png"), data });
        form.insert("caption".into(), FormValue::Text((*caption).into()));
        ph.post(&form)?;
    }
    out.extend_from_slice(ph.messages());

    let mut bd = FixtureBuilder::new(&board(), sandbox.clone(), identity.clone(), now + 10);
    let first = bd.post(&text_form([("topic", "news"), ("body", "Water point open at the school."), ("nick", "ana")]))?;
    bd.post(&text_form([("topic", "lost"), ("body", "Found a blue backpack near the station."), ("nick", "ben")]))?;
    bd.post(&text_form([("topic", "news"), ("body", "Bus line 4 is running again."), ("nick", "cy")]))?;
    bd.post(&text_form([("topic", "help"), ("body", "Need two volunteers for the kitchen."), ("nick", "dee")]))?;
    bd.post(&text_form([("topic", "lost"), ("body", "Grey cat answering to Miso."), ("nick", "eli")]))?;
    let reply = bd.reply(&first, &text_form([("body", "Queue is short after 3pm."), ("nick", "fay")]))?;
    bd.reply(&reply, &text_form([("body", "Bring your own bottles."), ("nick", "ana")]))?;
    out.extend_from_slice(bd.messages());

    let mut pf = FixtureBuilder::new(&peoplefinder(), sandbox.clone(), identity.clone(), now + 20);
    let rec = pf.post(&text_form([("name", "Maria K"), ("age", "34"), ("status", "missing"), ("author", "desk")]))?;
    pf.post(&text_form([("name", "Jon P"), ("location", "north camp"), ("status", "safe"), ("author", "desk")]))?;
    let seen = pf.reply(&rec, &text_form([("note", "Seen at the clinic."), ("author", "nurse")]))?;
    pf.reply(&seen, &text_form([("note", "Moved to the east shelter."), ("author", "volunteer")]))?;
    out.extend_from_slice(pf.messages());

    let key = KeyRecord::to_message(identity, now, DEFAULT_TTL).expect("key record message");
    out.push(Arc::new(key));
    debug_assert_eq!(out.len(), DEMO_COUNT);
    Ok(out)
}
