//! Shared glyph and color codes for the built-in games.
//!
//! Digits 0-9 render as glyphs 1-10 so that glyph 0 stays reserved for
//! background.

pub const PLAYER: u16 = 1;
pub const ENEMY: u16 = 2;
pub const ENERGY: u16 = 3;
pub const ATTACK_CARD: u16 = 4;
pub const SKILL_CARD: u16 = 5;
pub const BUTTON: u16 = 6;
pub const COUNTER: u16 = 7;
pub const TITLE: u16 = 8;
pub const FOCUS: u16 = 9;
pub const LAMP: u16 = 10;

pub const DIGIT_BASE: u16 = 1;
pub const PLAYER_BODY: u16 = 11;
pub const ENEMY_BODY: u16 = 12;
pub const SHIELD: u16 = 13;
pub const STRIKE_ART: u16 = 14;
pub const DEFEND_ART: u16 = 15;
pub const END_TURN: u16 = 16;
pub const FLOOR_MARK: u16 = 17;
pub const TITLE_BAR: u16 = 18;
pub const BUTTON_FACE: u16 = 19;
pub const LABEL_A: u16 = 20;
pub const BACK_ARROW: u16 = 23;
pub const DEAD_END: u16 = 24;
pub const MENU_MARK: u16 = 25;
pub const LAMP_GLOW: u16 = 26;

pub fn digit_glyph(d: u8) -> u16 {
    DIGIT_BASE + d as u16
}

/// Inverse of [`digit_glyph`].
pub fn glyph_digit(glyph: u16) -> Option<u8> {
    (DIGIT_BASE..DIGIT_BASE + 10)
        .contains(&glyph)
        .then(|| (glyph - DIGIT_BASE) as u8)
}

/// RGB used by the debug renderer, indexed by color code. Codes past the end
/// render magenta.
pub const RGB: [[u8; 3]; 11] = [
    [16, 16, 24],    // background
    [64, 160, 255],  // player
    [220, 48, 48],   // enemy
    [255, 200, 40],  // energy
    [230, 120, 60],  // attack card
    [80, 200, 120],  // skill card
    [180, 180, 200], // button
    [140, 140, 140], // counter
    [90, 90, 160],   // title
    [255, 255, 255], // focus
    [255, 240, 120], // lamp
];
