const { spawn } = require('child_process');

function crossEnv(args) {
  const [command, ...rest] = args;
  const env = Object.assign({}, process.env);
  const proc = spawn(command, rest, { stdio: 'inherit', shell: true, env });
  process.on('SIGTERM', () => proc.kill('SIGTERM'));
  proc.on('exit', (code) => process.exit(code === null ? 1 : code));
  return proc;
}

module.exports = crossEnv;
