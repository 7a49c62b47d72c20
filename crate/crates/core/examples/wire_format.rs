//! Byte layout of an item message and the connection handshake.

use bpmf::dist::wire::{decode_item, encode_item, Handshake, ItemMsg};
use bpmf::dist::ItemKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let msg = ItemMsg { kind: ItemKind::Movie, index: 7, iteration: 3, values: vec![1.0, 2.0] };
    let bytes = encode_item(&msg);
    println!("{} bytes: {}", bytes.len(), bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" "));
    assert_eq!(decode_item(&bytes, 2)?, msg);

    let hello = Handshake::new(4, 32, 99).encode();
    println!("handshake: {}", hello.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" "));
    let other = Handshake::new(4, 16, 99);
    println!("mismatch: {:?}", Handshake::new(4, 32, 99).first_mismatch(&other));
    Ok(())
}
