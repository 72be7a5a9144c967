/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_certificate_free: (a: number, b: number) => void;
export const __wbg_simulation_free: (a: number, b: number) => void;
export const certificate_a_star: (a: number) => number;
export const certificate_delta: (a: number) => number;
export const certificate_envelopes: (a: number, b: number, c: number) => [number, number];
export const certificate_eps: (a: number) => number;
export const certificate_eta: (a: number) => number;
export const certificate_k: (a: number) => number;
export const certificate_valid: (a: number) => number;
export const certificate_violation: (a: number) => [number, number];
export const certify: (a: number, b: number, c: number, d: number) => [number, number, number];
export const eps_map: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
export const simulation_advance: (a: number, b: number) => [number, number];
export const simulation_delta: (a: number) => number;
export const simulation_eps: (a: number) => number;
export const simulation_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const simulation_sup_u_minus_1: (a: number) => number;
export const simulation_time: (a: number) => number;
export const simulation_u: (a: number) => [number, number];
export const simulation_v: (a: number) => [number, number];
export const simulation_w: (a: number) => [number, number];
export const simulation_x: (a: number) => [number, number];
export const simulation_z: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
