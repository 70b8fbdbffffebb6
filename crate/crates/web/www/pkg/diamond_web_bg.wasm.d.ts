/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const scatter: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint, j: number) => [number, number, number, number];
export const schedule: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const trajectory_pair: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
