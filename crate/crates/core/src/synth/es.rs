//! A tiny but decodable H.264 Baseline elementary stream: 16x16 pictures,
//! IDR frames carry one I_PCM macroblock, P frames skip their only macroblock.

use super::bits::BitWriter;

const WIDTH_MBS: u32 = 1;
const HEIGHT_MBS: u32 = 1;
const LOG2_MAX_FRAME_NUM: u32 = 4;

pub const REFERENCE_WIDTH: u16 = (WIDTH_MBS * 16) as u16;
pub const REFERENCE_HEIGHT: u16 = (HEIGHT_MBS * 16) as u16;

/// Inserts emulation prevention bytes into an RBSP.
pub fn escape_rbsp(rbsp: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rbsp.len() + rbsp.len() / 64);
    let mut zeros = 0;
    for &b in rbsp {
        if zeros >= 2 && b <= 3 {
            out.push(3);
            zeros = 0;
        }
        out.push(b);
        zeros = if b == 0 { zeros + 1 } else { 0 };
    }
    out
}

fn nal(header: u8, rbsp: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0, 1, header];
    out.extend(escape_rbsp(rbsp));
    out
}

fn sps() -> Vec<u8> {
    let mut w = BitWriter::new();
    w.u(8, 66); // Baseline
    w.u(8, 0xC0); // constraint_set0/1
    w.u(8, 10); // level 1.0
    w.ue(0); // seq_parameter_set_id
    w.ue(LOG2_MAX_FRAME_NUM - 4);
    w.ue(2); // pic_order_cnt_type
    w.ue(1); // max_num_ref_frames
    w.u(1, 0); // gaps_in_frame_num_value_allowed_flag
    w.ue(WIDTH_MBS - 1);
    w.ue(HEIGHT_MBS - 1);
    w.u(1, 1); // frame_mbs_only_flag
    w.u(1, 1); // direct_8x8_inference_flag
    w.u(1, 0); // frame_cropping_flag
    w.u(1, 0); // vui_parameters_present_flag
    w.trailing();
    nal(0x67, &w.finish())
}

fn pps() -> Vec<u8> {
    let mut w = BitWriter::new();
    w.ue(0); // pic_parameter_set_id
    w.ue(0); // seq_parameter_set_id
    w.u(1, 0); // entropy_coding_mode_flag
    w.u(1, 0); // bottom_field_pic_order_in_frame_present_flag
    w.ue(0); // num_slice_groups_minus1
    w.ue(0); // num_ref_idx_l0_default_active_minus1
    w.ue(0); // num_ref_idx_l1_default_active_minus1
    w.u(1, 0); // weighted_pred_flag
    w.u(2, 0); // weighted_bipred_idc
    w.se(0); // pic_init_qp_minus26
    w.se(0); // pic_init_qs_minus26
    w.se(0); // chroma_qp_index_offset
    w.u(1, 1); // deblocking_filter_control_present_flag
    w.u(1, 0); // constrained_intra_pred_flag
    w.u(1, 0); // redundant_pic_cnt_present_flag
    w.trailing();
    nal(0x68, &w.finish())
}

fn idr_slice(idr_pic_id: u32, shade: u8) -> Vec<u8> {
    let mut w = BitWriter::new();
    w.ue(0); // first_mb_in_slice
    w.ue(7); // slice_type: I, all slices
    w.ue(0); // pic_parameter_set_id
    w.u(LOG2_MAX_FRAME_NUM, 0); // frame_num
    w.ue(idr_pic_id);
    w.u(1, 0); // no_output_of_prior_pics_flag
    w.u(1, 0); // long_term_reference_flag
    w.se(0); // slice_qp_delta
    w.ue(1); // disable_deblocking_filter_idc
    for _ in 0..WIDTH_MBS * HEIGHT_MBS {
        w.ue(25); // mb_type I_PCM
        w.align_zero();
        for i in 0..256u32 {
            w.u(8, (shade as u32 + i % 16 * 4).min(235));
        }
        for _ in 0..128 {
            w.u(8, 128);
        }
    }
    w.trailing();
    nal(0x65, &w.finish())
}

fn p_slice(frame_num: u32) -> Vec<u8> {
    let mut w = BitWriter::new();
    w.ue(0); // first_mb_in_slice
    w.ue(5); // slice_type: P, all slices
    w.ue(0); // pic_parameter_set_id
    w.u(LOG2_MAX_FRAME_NUM, frame_num % (1 << LOG2_MAX_FRAME_NUM));
    w.u(1, 0); // num_ref_idx_active_override_flag
    w.u(1, 0); // ref_pic_list_modification_flag_l0
    w.u(1, 0); // adaptive_ref_pic_marking_mode_flag
    w.se(0); // slice_qp_delta
    w.ue(1); // disable_deblocking_filter_idc
    w.ue(WIDTH_MBS * HEIGHT_MBS); // mb_skip_run
    w.trailing();
    nal(0x41, &w.finish())
}

/// `frames` access units with an IDR (preceded by SPS and PPS) every `keyint` frames.
pub fn reference_stream(frames: u32, keyint: u32) -> Vec<u8> {
    let keyint = keyint.max(1);
    let mut out = Vec::new();
    for i in 0..frames {
        let k = i % keyint;
        if k == 0 {
            let idr = i / keyint;
            out.extend(sps());
            out.extend(pps());
            out.extend(idr_slice(idr % 65536, 16 + (idr * 37 % 200) as u8));
        } else {
            out.extend(p_slice(k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framestream::{nal_kinds, split_access_units, NalKind};

    #[test]
    fn emulation_prevention() {
        assert_eq!(escape_rbsp(&[0, 0, 1, 0, 0, 0, 0, 0, 4]), vec![0, 0, 3, 1, 0, 0, 3, 0, 0, 3, 0, 4]);
        assert_eq!(escape_rbsp(&[1, 2, 3]), vec![1, 2, 3]);
    }

    #[test]
    fn stream_structure() {
        let es = reference_stream(7, 3);
        let kinds = nal_kinds(&es);
        assert_eq!(kinds.iter().filter(|k| **k == NalKind::IdrSlice).count(), 3);
        assert_eq!(kinds.iter().filter(|k| **k == NalKind::NonIdrSlice).count(), 4);
        assert_eq!(kinds.iter().filter(|k| **k == NalKind::Sps).count(), 3);
        let units = split_access_units(&es);
        assert_eq!(units.len(), 7);
        assert_eq!(units.concat(), es);
    }
}
